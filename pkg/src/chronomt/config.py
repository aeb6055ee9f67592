"""Run configuration: a JSON tree with dotted-key CLI overrides.

Overrides look like mt.model_dim=128 or mt_train.weights=[1,0,0]; the
value side is parsed as JSON when possible and kept as a string
otherwise.  Explicit CLI flags win over --set overrides, which win over
the file.  Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .corpus import DEFAULT_LABEL_NAMES, LabelSet
from .errors import ValidationError
from .lm import LMConfig
from .transformer import TransformerConfig


@dataclass
class DataConfig:
    synthetic: Optional[dict] = None  # SyntheticConfig fields; generated in prep
    parallel: Optional[str] = None  # paths, used when synthetic is None
    mono_a: Optional[str] = None
    mono_m: Optional[str] = None
    dev_frac: float = 0.1
    test_frac: float = 0.1
    stratify: bool = False


@dataclass
class TokenizerConfig:
    min_freq: int = 1
    joint_vocab: bool = False


@dataclass
class MTTrainConfig:
    epochs: int = 10
    batch_parallel: int = 32
    batch_mono: int = 32
    lr: float = 3e-3
    warmup_steps: int = 200
    grad_clip: float = 1.0
    min_parallel_share: float = 0.25
    backward_parallel: bool = False
    weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class LMFitConfig:
    epochs: int = 3
    batch_size: int = 32
    lr: float = 1e-3
    warmup_steps: int = 100
    grad_clip: float = 1.0


@dataclass
class DecodeConfig:
    beam_size: int = 5
    top_k: int = 5
    max_len: Optional[int] = None


@dataclass
class RerankConfig:
    use_total_nll: bool = False
    dump_grid: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    workdir: str = "run"
    labels: list = field(default_factory=lambda: list(DEFAULT_LABEL_NAMES))
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    mt: TransformerConfig = field(default_factory=TransformerConfig)
    mt_train: MTTrainConfig = field(default_factory=MTTrainConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    lm_pretrain: LMFitConfig = field(default_factory=LMFitConfig)
    lm_finetune: LMFitConfig = field(default_factory=LMFitConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)

    def validate(self):
        LabelSet(self.labels)
        self.mt.validate()
        self.lm.validate()
        if self.mt.share_decoder_embeddings and not self.tokenizer.joint_vocab:
            raise ValidationError(
                "mt.share_decoder_embeddings requires tokenizer.joint_vocab"
            )
        if self.tokenizer.min_freq < 1:
            raise ValidationError("tokenizer.min_freq must be >= 1")
        if not 1 <= self.decode.top_k <= self.decode.beam_size:
            raise ValidationError(
                f"decode.top_k must be in [1, beam_size={self.decode.beam_size}], "
                f"got {self.decode.top_k}"
            )
        d = self.data
        if not (0 <= d.dev_frac < 1 and 0 <= d.test_frac < 1 and d.dev_frac + d.test_frac < 1):
            raise ValidationError(
                f"data fractions out of range: dev={d.dev_frac}, test={d.test_frac}"
            )
        if d.synthetic is None and d.parallel is None:
            raise ValidationError(
                "config needs either data.synthetic or a data.parallel path"
            )
        if len(self.mt_train.weights) != 3:
            raise ValidationError(
                "mt_train.weights must be [supervised, lm_ancient, lm_modern]"
            )
        return self

    def to_dict(self):
        return _asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _build(cls, d, "")

    @classmethod
    def load(cls, path, overrides=()):
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {path} is not valid JSON: {e}") from None
        raw = apply_overrides(raw, overrides)
        return cls.from_dict(raw).validate()


_NESTED = {
    "data": DataConfig,
    "tokenizer": TokenizerConfig,
    "mt": TransformerConfig,
    "mt_train": MTTrainConfig,
    "lm": LMConfig,
    "lm_pretrain": LMFitConfig,
    "lm_finetune": LMFitConfig,
    "decode": DecodeConfig,
    "rerank": RerankConfig,
}


def _asdict(obj):
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if hasattr(v, "to_dict"):
            out[f.name] = v.to_dict()
        elif f.name in _NESTED:
            out[f.name] = _asdict(v)
        elif isinstance(v, (list, tuple)):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ValidationError(f"config section {prefix or 'root'} must be an object")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in d.items():
        where = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ValidationError(f"unknown config key {where!r}")
        if key in _NESTED and prefix == "":
            kwargs[key] = _build(_NESTED[key], value, where)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def apply_overrides(raw, overrides):
    """Apply dotted key=value pairs onto a raw config dict."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(
                f"override {item!r} is not of the form dotted.key=value"
            )
        dotted, value = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ValidationError(f"override {item!r} has an empty key segment")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(
                    f"override {item!r} descends into non-object key {k!r}"
                )
        node[keys[-1]] = parsed
    return raw
