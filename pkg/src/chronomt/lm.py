"""Decoder-only causal language model over the joint vocabulary.

Pretrained on modern monolingual text, then finetuned on multilabel
query strings that interleave separator tokens, both text sides, and a
chronology control token:

    [zh_a] a_1..a_n [zh_m] m_1..m_k [chron] [label] [eos]

Scoring is teacher-forced NLL in nats over the full query, control
tokens included.  Learned positions, pre-LN blocks, final layer norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .autodiff import Tensor, add, backward, cross_entropy, dropout, embedding, matmul, no_grad, scale
from .checkpoint import config_digest, load_checkpoint, save_checkpoint
from .errors import DivergenceError, ValidationError
from .optim import ParameterStore, adam_step, clip_grad_norm, lr_at
from .vocab import BOS, EOS, PAD, SEP_CHRON, SEP_ZH_A, SEP_ZH_M


@dataclass
class LMConfig:
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 128
    ffn_dim: int = 512
    context_len: int = 128
    dropout: float = 0.1
    ln_eps: float = 1e-6

    def validate(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValidationError("num_layers and num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ValidationError(
                f"model_dim {self.model_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.context_len < 2 or self.ffn_dim < 1:
            raise ValidationError("context_len and ffn_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self):
        return {
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "model_dim": self.model_dim,
            "ffn_dim": self.ffn_dim,
            "context_len": self.context_len,
            "dropout": self.dropout,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class QueryTriple:
    ancient: str
    modern: str
    label: object

    def __post_init__(self):
        if not self.ancient or not self.modern:
            raise ValidationError("query triple needs nonempty ancient and modern text")
        if self.label is None:
            raise ValidationError("query triple needs a chronology label")


@dataclass(frozen=True)
class LMScore:
    total_nll: float
    token_count: int
    per_token_nll: float


@dataclass
class LMSchedule:
    epochs: int = 3
    batch_size: int = 32
    lr: float = 1e-3
    warmup_steps: int = 100
    grad_clip: float = 1.0
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")


def build_query(vocab, triple):
    """Encode one (ancient, modern, label) triple into LM query ids."""
    parts = [
        np.array([SEP_ZH_A], dtype=np.int64),
        vocab.encode(triple.ancient),
        np.array([SEP_ZH_M], dtype=np.int64),
        vocab.encode(triple.modern),
        np.array([SEP_CHRON, vocab.control_id(triple.label), EOS], dtype=np.int64),
    ]
    return np.concatenate(parts)


class CausalLM:
    def __init__(self, config, vocab_size, seed=0, dtype=np.float32):
        config.validate()
        self.config = config
        self.vocab_size = int(vocab_size)
        self.dtype = np.dtype(dtype)
        self.finetuned = False
        self.store = ParameterStore(dtype=dtype, seed=seed)
        d = config.model_dim
        self.store.create("tok", (self.vocab_size, d), kind="embedding")
        self.store.create("pos", (config.context_len, d), kind="embedding")
        for i in range(config.num_layers):
            layers.init_layer_norm(self.store, f"blk{i}.ln1", d)
            layers.init_attention(self.store, f"blk{i}.attn", d)
            layers.init_layer_norm(self.store, f"blk{i}.ln2", d)
            layers.init_ffn(self.store, f"blk{i}.ffn", d, config.ffn_dim)
        layers.init_layer_norm(self.store, "final", d)
        self.store.create("out", (d, self.vocab_size), kind="matmul")

    def logits(self, ids, train=False, rng=None):
        """ids (B, T) -> logits tensor (B, T, V)."""
        b, t = ids.shape
        cfg = self.config
        if t > cfg.context_len:
            raise ValidationError(
                f"sequence length {t} exceeds LM context {cfg.context_len}"
            )
        mask = layers.causal_mask(t, self.dtype.type) + layers.key_padding_mask(
            ids, PAD, self.dtype.type
        )
        d = cfg.model_dim
        h = scale(embedding(self.store["tok"], ids), math.sqrt(d))
        pos = embedding(self.store["pos"], np.arange(t))
        h = add(h, pos)
        if train and cfg.dropout > 0:
            h = dropout(h, cfg.dropout, rng)
        for i in range(cfg.num_layers):
            normed = layers.apply_layer_norm(self.store, f"blk{i}.ln1", h, cfg.ln_eps)
            a = layers.attention(
                self.store, f"blk{i}.attn", normed, normed,
                cfg.num_heads, mask, cfg.dropout, rng, train,
            )
            h = layers.residual(h, a, cfg.dropout, rng, train)
            normed = layers.apply_layer_norm(self.store, f"blk{i}.ln2", h, cfg.ln_eps)
            f = layers.ffn(self.store, f"blk{i}.ffn", normed, cfg.dropout, rng, train)
            h = layers.residual(h, f, cfg.dropout, rng, train)
        h = layers.apply_layer_norm(self.store, "final", h, cfg.ln_eps)
        return matmul(h, self.store["out"])

    @staticmethod
    def _frame(seqs):
        """Sequences (each already EOS-terminated) -> input/target/weights."""
        if not seqs:
            raise ValidationError("empty batch")
        width = max(len(s) for s in seqs)
        b = len(seqs)
        inp = np.full((b, width), PAD, dtype=np.int64)
        tgt = np.full((b, width), PAD, dtype=np.int64)
        w = np.zeros((b, width), dtype=np.float64)
        inp[:, 0] = BOS
        for i, s in enumerate(seqs):
            n = len(s)
            inp[i, 1:n] = s[:-1]
            tgt[i, :n] = s
            w[i, :n] = 1.0
        return inp, tgt, w

    def loss(self, seqs, train=True, rng=None):
        inp, tgt, w = self._frame(seqs)
        return cross_entropy(self.logits(inp, train=train, rng=rng), tgt, w)

    def sequence_nlls(self, seqs, batch_size=64):
        """Total NLL (nats, float64) and token count for each sequence."""
        if not seqs:
            raise ValidationError("empty batch")
        nlls = np.zeros(len(seqs), dtype=np.float64)
        lens = np.array([len(s) for s in seqs], dtype=np.int64)
        with no_grad():
            for start in range(0, len(seqs), batch_size):
                chunk = seqs[start : start + batch_size]
                inp, tgt, w = self._frame(chunk)
                out = self.logits(inp, train=False)
                x = out.data.astype(np.float64)
                m = x.max(axis=-1, keepdims=True)
                z = x - m
                logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
                rows = np.arange(tgt.shape[0])[:, None]
                cols = np.arange(tgt.shape[1])[None, :]
                picked = logp[rows, cols, tgt]
                nlls[start : start + len(chunk)] = -(picked * w).sum(axis=1)
        return nlls, lens

    def parameter_count(self):
        return self.store.parameter_count()

    def snapshot(self):
        return {k: v.copy() for k, v in self.store.state_arrays().items()}

    def restore(self, snap):
        self.store.load_state_arrays(snap, self.store.step_count)

    def save(self, path, extra_meta=None):
        cfg = self.config.to_dict()
        meta = {
            "kind": "causal_lm",
            "config": cfg,
            "config_digest": config_digest(cfg),
            "vocab_size": self.vocab_size,
            "step_count": self.store.step_count,
            "finetuned": self.finetuned,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.store.state_arrays(), meta)

    @classmethod
    def load(cls, path, dtype=np.float32):
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "causal_lm":
            raise ValidationError(
                f"checkpoint at {path} holds {meta.get('kind')!r}, expected 'causal_lm'"
            )
        lm = cls(LMConfig.from_dict(meta["config"]), meta["vocab_size"], dtype=dtype)
        lm.store.load_state_arrays(arrays, meta.get("step_count", 0))
        lm.finetuned = bool(meta.get("finetuned", False))
        return lm, meta


def score(lm, vocab, triple):
    """NLL of one query under the LM; control tokens are scored too."""
    ids = build_query(vocab, triple)
    if len(ids) > lm.config.context_len:
        raise ValidationError(
            f"query length {len(ids)} exceeds LM context {lm.config.context_len}"
        )
    nlls, lens = lm.sequence_nlls([ids])
    return LMScore(
        total_nll=float(nlls[0]),
        token_count=int(lens[0]),
        per_token_nll=float(nlls[0] / lens[0]),
    )


def score_batch(lm, vocab, triples, batch_size=64):
    """Batched scoring; matches score() per triple within float tolerance."""
    ids_list = []
    for i, triple in enumerate(triples):
        ids = build_query(vocab, triple)
        if len(ids) > lm.config.context_len:
            raise ValidationError(
                f"query {i} has length {len(ids)}, exceeding LM context "
                f"{lm.config.context_len}"
            )
        ids_list.append(ids)
    nlls, lens = lm.sequence_nlls(ids_list, batch_size=batch_size)
    return [
        LMScore(float(n), int(k), float(n / k)) for n, k in zip(nlls, lens)
    ]


def perplexity(lm, seqs, batch_size=64):
    """exp of mean per-token NLL over a set of id sequences."""
    nlls, lens = lm.sequence_nlls(seqs, batch_size=batch_size)
    return float(np.exp(nlls.sum() / lens.sum()))


def _fit(lm, train_seqs, dev_seqs, schedule, select_best, ckpt_dir=None, ckpt_prefix="epoch"):
    """Shared epoch loop for pretraining and finetuning.

    Returns (history, diverged).  history rows: dict with epoch, mean
    train loss, dev perplexity (None when no dev set).  On divergence
    the parameters roll back to the end of the last completed epoch.
    When select_best, the model finishes at the epoch with the lowest
    dev perplexity.
    """
    schedule.validate()
    rng = np.random.default_rng(schedule.seed)
    history = []
    snapshots = [] if select_best else None
    last_good = lm.snapshot()
    diverged = False
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(len(train_seqs))
        losses = []
        try:
            for start in range(0, len(order), schedule.batch_size):
                batch = [train_seqs[i] for i in order[start : start + schedule.batch_size]]
                lm.store.zero_grads()
                loss = lm.loss(batch, train=True, rng=rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite LM loss {value} at step {lm.store.step_count + 1}"
                    )
                backward(loss)
                clip_grad_norm(lm.store, schedule.grad_clip)
                adam_step(
                    lm.store,
                    lr_at(lm.store.step_count + 1, schedule.lr, schedule.warmup_steps),
                )
                losses.append(value)
        except DivergenceError:
            lm.restore(last_good)
            diverged = True
            break
        dev_ppl = perplexity(lm, dev_seqs) if dev_seqs else None
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "dev_ppl": dev_ppl,
            }
        )
        last_good = lm.snapshot()
        if select_best:
            snapshots.append(last_good)
        if ckpt_dir is not None:
            lm.save(f"{ckpt_dir}/{ckpt_prefix}{epoch}.ckpt", {"epoch": epoch})
    if select_best and history:
        best = min(range(len(history)), key=lambda i: history[i]["dev_ppl"])
        lm.restore(snapshots[best])
        for i, row in enumerate(history):
            row["selected"] = i == best
    return history, diverged


def pretrain(lm, train_seqs, schedule, dev_seqs=None, ckpt_dir=None):
    """Next-token pretraining on monolingual sequences (ids incl. EOS)."""
    if not train_seqs:
        raise ValidationError("pretraining corpus is empty")
    return _fit(lm, train_seqs, dev_seqs, schedule, select_best=False,
                ckpt_dir=ckpt_dir, ckpt_prefix="pretrain_epoch")


def finetune(lm, vocab, examples, schedule, dev_examples=None, ckpt_dir=None):
    """Finetune on labeled triples; keeps the epoch with best dev perplexity."""
    if not examples:
        raise ValidationError("finetuning corpus is empty")

    def to_queries(rows, what):
        seqs = []
        for i, ex in enumerate(rows):
            if ex.label is None:
                raise ValidationError(
                    f"{what} example {i} has no chronology label; "
                    "finetuning needs fully labeled triples"
                )
            seqs.append(
                build_query(vocab, QueryTriple(ex.source, ex.target, ex.label))
            )
        return seqs

    train_seqs = to_queries(examples, "train")
    dev_seqs = to_queries(dev_examples, "dev") if dev_examples else None
    too_long = [i for i, s in enumerate(train_seqs) if len(s) > lm.config.context_len]
    if too_long:
        raise ValidationError(
            f"train example {too_long[0]} builds a query of length "
            f"{len(train_seqs[too_long[0]])}, exceeding LM context "
            f"{lm.config.context_len}"
        )
    history, diverged = _fit(
        lm, train_seqs, dev_seqs, schedule,
        select_best=dev_seqs is not None,
        ckpt_dir=ckpt_dir, ckpt_prefix="finetune_epoch",
    )
    if not diverged:
        lm.finetuned = True
    return history, diverged
