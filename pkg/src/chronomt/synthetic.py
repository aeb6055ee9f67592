"""Seeded synthetic corpus generator.

The generated world is a stand-in for the real ancient/modern data with the
same learnability shape:

  * a shared "ancient" content language: a first-order Markov chain over a
    small CJK-range alphabet (each character has a few preferred successors),
  * one era per chronology label, each with an injective substitution table
    mapping ancient characters into an era-specific modern character block,
  * era marker characters sprinkled into source sentences at a configured
    per-position rate; markers are substituted like any other character.

A parallel target is always the exact character-wise image of its source
under the era's table, so the generator doubles as a translation oracle.
Era identity is recoverable from markers alone, which gives chronology
inference something verifiable at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import DEFAULT_LABEL_NAMES, LabelSet, MonoCorpus, ParallelExample
from .errors import ValidationError

_ANCIENT_BASE = 0x4E00   # content alphabet for the ancient side
_MARKER_A_BASE = 0x5E00  # one marker char per era, ancient side
_MODERN_BASE = 0x7000    # per-era modern blocks start here
_MARKER_M_BASE = 0x8E00  # images of the era markers

_SUCC_OFFSETS = (1, 2, 5, 9)  # arithmetic successor structure of the chain


@dataclass
class SyntheticConfig:
    vocab_size: int = 24
    len_min: int = 4
    len_max: int = 12
    marker_rate: float | Sequence[float] = 0.5
    follow_prob: float = 0.75
    n_parallel: int = 2400
    n_unlabeled: int = 0
    n_mono_a: int = 2000
    n_mono_m: int = 2000
    label_names: Sequence[str] = DEFAULT_LABEL_NAMES
    # optional explicit substitution tables, one dict per era over a common
    # content alphabet; markers are still added and mapped automatically
    tables: Optional[list[dict[str, str]]] = None

    def __post_init__(self):
        if self.len_min < 1:
            raise ValidationError(f"len_min must be >= 1, got {self.len_min}")
        if self.len_max < self.len_min:
            raise ValidationError(
                f"len_max {self.len_max} < len_min {self.len_min}"
            )
        if not (0.0 <= self.follow_prob <= 1.0):
            raise ValidationError(
                f"follow_prob must lie in [0, 1], got {self.follow_prob}"
            )
        if self.tables is None and self.vocab_size < 2:
            raise ValidationError("vocab_size must be at least 2")
        for field_name in ("n_parallel", "n_unlabeled", "n_mono_a", "n_mono_m"):
            if getattr(self, field_name) < 0:
                raise ValidationError(f"{field_name} must be >= 0")
        self.rates()

    def rates(self) -> list[float]:
        n = len(self.label_names)
        if isinstance(self.marker_rate, (int, float)):
            rates = [float(self.marker_rate)] * n
        else:
            rates = [float(r) for r in self.marker_rate]
        if len(rates) != n:
            raise ValidationError(
                f"got {len(rates)} marker rates for {n} labels"
            )
        if any(not (0.0 <= r < 1.0) for r in rates):
            raise ValidationError(f"marker rates must lie in [0, 1): {rates}")
        return rates

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "len_min": self.len_min,
            "len_max": self.len_max,
            "marker_rate": self.marker_rate if isinstance(self.marker_rate, (int, float))
            else list(self.marker_rate),
            "follow_prob": self.follow_prob,
            "n_parallel": self.n_parallel,
            "n_unlabeled": self.n_unlabeled,
            "n_mono_a": self.n_mono_a,
            "n_mono_m": self.n_mono_m,
            "label_names": list(self.label_names),
            "tables": self.tables,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**d)


def apply_table(table: dict[str, str], text: str) -> str:
    """Character-wise image of text under a substitution table."""
    try:
        return "".join(table[ch] for ch in text)
    except KeyError as e:
        raise ValidationError(f"character {e.args[0]!r} not covered by substitution table") from None


def _check_injective(table: dict[str, str], era: str) -> None:
    if len(set(table.values())) != len(table):
        raise ValidationError(f"substitution table for era {era!r} is not injective")


class SyntheticWorld:
    """Alphabets, markers and per-era tables, fully determined by (config, seed)."""

    def __init__(self, config: SyntheticConfig, seed: int):
        self.config = config
        self.seed = seed
        self.label_set = LabelSet(config.label_names)
        n_eras = len(self.label_set)
        self.marker_rates = config.rates()

        self.marker_a = [chr(_MARKER_A_BASE + e) for e in range(n_eras)]
        self.marker_m = [chr(_MARKER_M_BASE + e) for e in range(n_eras)]

        if config.tables is not None:
            if len(config.tables) != n_eras:
                raise ValidationError(
                    f"got {len(config.tables)} substitution tables for {n_eras} labels"
                )
            domains = [frozenset(t) for t in config.tables]
            if len(set(domains)) != 1:
                raise ValidationError("explicit substitution tables must share one domain")
            self.alphabet_a = sorted(domains[0])
            self.tables = [dict(t) for t in config.tables]
        else:
            if config.vocab_size < 2:
                raise ValidationError("vocab_size must be at least 2")
            v = config.vocab_size
            self.alphabet_a = [chr(_ANCIENT_BASE + i) for i in range(v)]
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
            self.tables = []
            for e in range(n_eras):
                perm = rng.permutation(v)
                block = _MODERN_BASE + e * v
                self.tables.append(
                    {self.alphabet_a[i]: chr(block + int(perm[i])) for i in range(v)}
                )
        for e, tab in enumerate(self.tables):
            tab[self.marker_a[e]] = self.marker_m[e]
            _check_injective(tab, self.label_set[e].name)

        v = len(self.alphabet_a)
        self._succ = [
            sorted({(i + off) % v for off in _SUCC_OFFSETS} - {i}) for i in range(v)
        ]

    # -- generation ---------------------------------------------------------

    def sample_source(self, rng: np.random.Generator, era: int) -> str:
        cfg = self.config
        length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
        rate = self.marker_rates[era]
        out = []
        prev = None
        for _ in range(length):
            if rng.random() < rate:
                out.append(self.marker_a[era])
                continue
            if prev is None or rng.random() >= cfg.follow_prob:
                idx = int(rng.integers(len(self.alphabet_a)))
            else:
                succ = self._succ[prev]
                idx = succ[int(rng.integers(len(succ)))]
            out.append(self.alphabet_a[idx])
            prev = idx
        return "".join(out)

    def translate(self, source: str, era: int) -> str:
        return apply_table(self.tables[era], source)

    def count_markers(self, sentence: str) -> list[int]:
        """Per-era marker occurrences on the ancient side."""
        return [sentence.count(m) for m in self.marker_a]

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "alphabet_a": self.alphabet_a,
            "marker_a": self.marker_a,
            "marker_m": self.marker_m,
            "tables": self.tables,
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        cfg = SyntheticConfig.from_dict(d["config"])
        world = cls(cfg, d["seed"])
        # saved tables are authoritative (config may have had tables=None)
        world.tables = [dict(t) for t in d["tables"]]
        return world


def gen_synthetic(
    config: SyntheticConfig, seed: int
) -> tuple[list[ParallelExample], MonoCorpus, MonoCorpus]:
    """Generate (parallel, mono zh-a, mono zh-m), reproducible from seed."""
    world = SyntheticWorld(config, seed)
    ss = np.random.SeedSequence([seed, 0xDA7A])
    rng_par, rng_a, rng_m = (np.random.default_rng(s) for s in ss.spawn(3))
    n_eras = len(world.label_set)

    parallel: list[ParallelExample] = []
    for i in range(config.n_parallel + config.n_unlabeled):
        era = int(rng_par.integers(n_eras))
        src = world.sample_source(rng_par, era)
        tgt = world.translate(src, era)
        label = world.label_set[era] if i < config.n_parallel else None
        parallel.append(ParallelExample(src, tgt, label))

    mono_a = MonoCorpus(
        "zh-a",
        tuple(
            world.sample_source(rng_a, int(rng_a.integers(n_eras)))
            for _ in range(config.n_mono_a)
        ),
    )
    mono_m_sents = []
    for _ in range(config.n_mono_m):
        era = int(rng_m.integers(n_eras))
        mono_m_sents.append(world.translate(world.sample_source(rng_m, era), era))
    mono_m = MonoCorpus("zh-m", tuple(mono_m_sents))
    return parallel, mono_a, mono_m
