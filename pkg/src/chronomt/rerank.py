"""LM reranking of beam candidates and chronology inference.

Every (candidate, label) pair becomes one query scored by the finetuned
LM; the grid always has exactly |candidates| x |labels| cells, ordered
by beam rank then label index.  Selection minimizes per-token NLL by
default (total NLL behind a flag, kept for ablations).  Ties prefer the
lower beam rank, then the lower label index.  Cells whose query exceeds
the LM context, or whose candidate is empty, are marked invalid and
excluded from selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .corpus import ChronologyLabel
from .errors import ValidationError
from .lm import LMScore, QueryTriple, build_query, score_batch

@dataclass(frozen=True)
class ScoredCandidate:
    modern: str
    label: ChronologyLabel
    beam_rank: int
    score: Optional[LMScore]
    valid: bool


def _grid_queries(lm, vocab, source, candidates, label_set):
    cells = []
    triples = []
    keep = []
    for rank, cand in enumerate(candidates):
        for label in label_set:
            if not cand:
                cells.append(ScoredCandidate(cand, label, rank, None, False))
                continue
            triple = QueryTriple(source, cand, label)
            if len(build_query(vocab, triple)) > lm.config.context_len:
                cells.append(ScoredCandidate(cand, label, rank, None, False))
                continue
            cells.append(None)
            keep.append(len(cells) - 1)
            triples.append(triple)
    if triples:
        for pos, triple, sc in zip(keep, triples, score_batch(lm, vocab, triples)):
            cells[pos] = ScoredCandidate(
                triple.modern, triple.label, pos // len(label_set), sc, True
            )
    return cells


def rerank(lm, vocab, source, candidates, label_set, use_total_nll=False):
    """Pick the best (modern, label) cell; returns (best, full grid)."""
    if not candidates:
        raise ValidationError("rerank needs at least one candidate")
    if not source:
        raise ValidationError("rerank needs a nonempty source")
    grid = _grid_queries(lm, vocab, source, candidates, label_set)
    valid = [c for c in grid if c.valid]
    if not valid:
        raise ValidationError(
            f"all {len(grid)} candidate/label cells are invalid for this source "
            "(empty candidates or queries beyond the LM context)"
        )

    def key(cell):
        nll = cell.score.total_nll if use_total_nll else cell.score.per_token_nll
        return (nll, cell.beam_rank, cell.label.index)

    return min(valid, key=key), grid


def infer_chronology(lm, vocab, source, modern, label_set, use_total_nll=False):
    """Label whose query scores best for a fixed (source, modern) pair.

    Returns (label, scores) with one LMScore per label in label order.
    Works with either a reference modern side or a system translation.
    """
    triples = [QueryTriple(source, modern, label) for label in label_set]
    scores = score_batch(lm, vocab, triples)

    def key(i):
        s = scores[i]
        return (s.total_nll if use_total_nll else s.per_token_nll, i)

    best = min(range(len(label_set)), key=key)
    return label_set[best], scores
