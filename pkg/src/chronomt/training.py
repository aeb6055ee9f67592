"""Semi-supervised trainer for the translation model.

Per optimizer step one stream is drawn: supervised parallel batches
train a->m directly; modern monolingual batches train the decoder side
through the null-context LM objective in the forward direction; ancient
monolingual batches do the same in the backward direction.  The
composite objective is

    L = w_sup * L_sup(P) + w_lm_a * L_lm(A) + w_lm_m * L_lm(M)

realized in expectation through the stream mixing proportions.  A
stream participates only when its corpus is nonempty and its weight is
positive, so zero weights and empty corpora produce identical runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import backward, scale
from .beam import greedy_decode_batch
from .errors import DivergenceError, ValidationError
from .evaluation import bleu
from .optim import adam_step, clip_grad_norm, lr_at

METRIC_COLUMNS = ("epoch", "step", "L_sup", "L_lm_A", "L_lm_M", "total", "dev_BLEU")


@dataclass(frozen=True)
class ObjectiveWeights:
    supervised: float = 1.0
    lm_ancient: float = 1.0
    lm_modern: float = 1.0

    def __post_init__(self):
        vals = (self.supervised, self.lm_ancient, self.lm_modern)
        if any(not math.isfinite(w) or w < 0 for w in vals):
            raise ValidationError(f"objective weights must be finite and >= 0: {vals}")


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_parallel: int = 32
    batch_mono: int = 32
    lr: float = 3e-3
    warmup_steps: int = 200
    grad_clip: float = 1.0
    seed: int = 0
    min_parallel_share: float = 0.25
    backward_parallel: bool = False  # also train m->a on parallel batches
    dev_batch: int = 64

    def validate(self):
        if self.epochs < 1 or self.batch_parallel < 1 or self.batch_mono < 1:
            raise ValidationError("epochs and batch sizes must be positive")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.min_parallel_share <= 1.0:
            raise ValidationError(
                f"min_parallel_share must be in [0, 1], got {self.min_parallel_share}"
            )


@dataclass
class StepRecord:
    epoch: int
    step: int
    stream: str  # "P", "A" or "M"
    component: float  # raw stream loss
    total: float  # weighted step loss


@dataclass
class EpochRecord:
    epoch: int
    step: int
    l_sup: Optional[float]
    l_lm_a: Optional[float]
    l_lm_m: Optional[float]
    total: float
    dev_bleu: Optional[float]


@dataclass
class TrainResult:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    proportions: dict = field(default_factory=dict)
    best_epoch: int = 0
    best_dev_bleu: Optional[float] = None
    diverged: bool = False
    metrics_path: Optional[str] = None
    best_ckpt: Optional[str] = None
    last_ckpt: Optional[str] = None


class _Cursor:
    """Endless shuffled batches over a fixed item list."""

    def __init__(self, items, batch_size, rng):
        self.items = items
        self.batch_size = batch_size
        self.rng = rng
        self.order = rng.permutation(len(items))
        self.pos = 0

    def next_batch(self):
        if self.pos >= len(self.order):
            self.order = self.rng.permutation(len(self.items))
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch_size]
        self.pos += len(idx)
        return [self.items[i] for i in idx]


def mixing_proportions(sizes, weights_on, min_parallel_share):
    """Stream proportions from corpus sizes, with a floor on parallel.

    sizes: dict stream -> corpus size for streams P/A/M; a stream with
    weight zero or size zero is dropped.  Raw shares are proportional to
    size; if P is active its share is raised to at least the floor and
    the others renormalized into the remainder.
    """
    active = [s for s in ("P", "A", "M") if weights_on[s] and sizes[s] > 0]
    if not active:
        raise ValidationError("no active training streams (check weights and corpora)")
    total = sum(sizes[s] for s in active)
    pi = {s: sizes[s] / total for s in active}
    if "P" in active and len(active) > 1 and pi["P"] < min_parallel_share:
        rest = 1.0 - min_parallel_share
        others = [s for s in active if s != "P"]
        other_total = sum(sizes[s] for s in others)
        pi = {s: rest * sizes[s] / other_total for s in others}
        pi["P"] = min_parallel_share
    return pi


def train(
    model,
    vocab_src,
    vocab_tgt,
    parallel,
    mono_a,
    mono_m,
    weights,
    schedule,
    dev=None,
    run_dir=None,
):
    """Run the composite objective; returns a TrainResult.

    parallel: list of ParallelExample; mono_a / mono_m: iterables of
    sentences (either side may be empty); dev: labeled or unlabeled
    parallel examples scored by greedy dev BLEU each epoch.  When
    run_dir is set, metrics.csv, best.ckpt and last.ckpt are written
    there.  On divergence the loop stops early with result.diverged
    set; files written so far are kept.
    """
    schedule.validate()
    pairs = [
        (vocab_src.encode(ex.source), vocab_tgt.encode(ex.target)) for ex in parallel
    ]
    a_seqs = [vocab_src.encode(s) for s in mono_a]
    m_seqs = [vocab_tgt.encode(s) for s in mono_m]
    weights_on = {
        "P": weights.supervised > 0,
        "A": weights.lm_ancient > 0,
        "M": weights.lm_modern > 0,
    }
    sizes = {"P": len(pairs), "A": len(a_seqs), "M": len(m_seqs)}
    pi = mixing_proportions(sizes, weights_on, schedule.min_parallel_share)
    active = sorted(pi)
    probs = np.array([pi[s] for s in active])
    probs = probs / probs.sum()
    if "P" in pi:
        steps_per_epoch = max(
            1, math.ceil(sizes["P"] / schedule.batch_parallel / pi["P"])
        )
    else:
        steps_per_epoch = max(
            1, max(math.ceil(sizes[s] / schedule.batch_mono) for s in active)
        )

    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 0x7124]))
    cursors = {}
    if "P" in pi:
        cursors["P"] = _Cursor(pairs, schedule.batch_parallel, rng)
    if "A" in pi:
        cursors["A"] = _Cursor(a_seqs, schedule.batch_mono, rng)
    if "M" in pi:
        cursors["M"] = _Cursor(m_seqs, schedule.batch_mono, rng)

    dev_pairs = None
    if dev:
        dev_pairs = ([vocab_src.encode(ex.source) for ex in dev], [ex.target for ex in dev])

    result = TrainResult(proportions=dict(pi))
    csv_file = writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        result.metrics_path = str(run_dir / "metrics.csv")
        csv_file = open(result.metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_file)
        writer.writerow(METRIC_COLUMNS)

    stream_weight = {
        "P": weights.supervised,
        "A": weights.lm_ancient,
        "M": weights.lm_modern,
    }
    step = 0
    try:
        for epoch in range(1, schedule.epochs + 1):
            sums = {"P": 0.0, "A": 0.0, "M": 0.0}
            counts = {"P": 0, "A": 0, "M": 0}
            total_sum = 0.0
            for _ in range(steps_per_epoch):
                stream = active[int(rng.choice(len(active), p=probs))] if len(active) > 1 else active[0]
                model.store.zero_grads()
                if stream == "P":
                    batch = cursors["P"].next_batch()
                    srcs = [p[0] for p in batch]
                    tgts = [p[1] for p in batch]
                    loss = model.forward_loss(srcs, tgts, "forward", train=True, rng=rng)
                    if schedule.backward_parallel:
                        loss = loss + model.forward_loss(
                            tgts, srcs, "backward", train=True, rng=rng
                        )
                elif stream == "A":
                    loss = model.lm_loss(
                        cursors["A"].next_batch(), "backward", train=True, rng=rng
                    )
                else:
                    loss = model.lm_loss(
                        cursors["M"].next_batch(), "forward", train=True, rng=rng
                    )
                component = loss.item()
                weighted = scale(loss, stream_weight[stream])
                total = weighted.item()
                if not math.isfinite(total):
                    raise DivergenceError(
                        f"non-finite loss {total} on stream {stream} at step {step + 1}"
                    )
                backward(weighted)
                clip_grad_norm(model.store, schedule.grad_clip)
                adam_step(
                    model.store,
                    lr_at(model.store.step_count + 1, schedule.lr, schedule.warmup_steps),
                )
                step += 1
                sums[stream] += component
                counts[stream] += 1
                total_sum += total
                result.steps.append(StepRecord(epoch, step, stream, component, total))

            dev_score = None
            if dev_pairs is not None:
                dev_score = _dev_bleu(model, vocab_tgt, dev_pairs, schedule.dev_batch)
            record = EpochRecord(
                epoch=epoch,
                step=step,
                l_sup=sums["P"] / counts["P"] if counts["P"] else None,
                l_lm_a=sums["A"] / counts["A"] if counts["A"] else None,
                l_lm_m=sums["M"] / counts["M"] if counts["M"] else None,
                total=total_sum / steps_per_epoch,
                dev_bleu=dev_score,
            )
            result.epochs.append(record)
            if writer is not None:
                writer.writerow(_csv_row(record))
                csv_file.flush()
            better = (
                result.best_dev_bleu is None
                or (dev_score is not None and dev_score > result.best_dev_bleu)
            )
            if dev_pairs is None:
                result.best_epoch = epoch
                if run_dir is not None:
                    result.best_ckpt = str(run_dir / "best.ckpt")
                    model.save(result.best_ckpt, {"epoch": epoch})
            elif better:
                result.best_epoch = epoch
                result.best_dev_bleu = dev_score
                if run_dir is not None:
                    result.best_ckpt = str(run_dir / "best.ckpt")
                    model.save(result.best_ckpt, {"epoch": epoch, "dev_bleu": dev_score})
            if run_dir is not None:
                result.last_ckpt = str(run_dir / "last.ckpt")
                model.save(result.last_ckpt, {"epoch": epoch, "dev_bleu": dev_score})
    except DivergenceError:
        result.diverged = True
    finally:
        if csv_file is not None:
            csv_file.close()
    return result


def _dev_bleu(model, vocab_tgt, dev_pairs, batch_size):
    srcs, refs = dev_pairs
    hyps = []
    for start in range(0, len(srcs), batch_size):
        outs = greedy_decode_batch(model, srcs[start : start + batch_size])
        hyps.extend(vocab_tgt.decode(toks) for toks in outs)
    return bleu(hyps, list(refs)).bleu


def _csv_row(rec):
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    return [
        rec.epoch,
        rec.step,
        fmt(rec.l_sup),
        fmt(rec.l_lm_a),
        fmt(rec.l_lm_m),
        fmt(rec.total),
        fmt(rec.dev_bleu),
    ]
