"""Beam search and greedy decoding for the seq2seq model.

Scores are cumulative token log-probabilities; the ranking score is
length-normalized (divided by the generated token count, EOS included).
A hypothesis is finished when it emits EOS or hits the length cap.
Ties break deterministically: within a step by lower token id, then
lower parent beam index; in the final ranking by token sequence.
Log-softmax is computed in float64 regardless of model dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ValidationError
from .transformer import EncoderState
from .vocab import BOS, EOS


@dataclass(frozen=True)
class Candidate:
    tokens: tuple
    logprob: float
    norm_score: float
    finished_by_eos: bool


def _log_softmax(x):
    x = x.astype(np.float64)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def step_logprobs(model, state, prefixes, direction="forward"):
    """Log-probabilities of the next token after each prefix row."""
    with no_grad():
        logits = model.decode_logits(state, prefixes, direction, train=False)
    return _log_softmax(logits.data[:, -1, :])


def _tile_state(state, n):
    if n == 1:
        return state
    return EncoderState(
        h=Tensor(np.repeat(state.h.data, n, axis=0)),
        key_mask=np.repeat(state.key_mask, n, axis=0),
        src=np.repeat(state.src, n, axis=0),
    )


def _generation_cap(model, max_len):
    cap = model.config.max_len - 1
    if max_len is not None:
        if max_len < 1:
            raise ValidationError(f"max_len must be positive, got {max_len}")
        cap = min(cap, int(max_len))
    return cap


def beam_search(model, src_ids, beam_size, top_k=1, max_len=None, direction="forward"):
    """Decode one source; returns up to top_k candidates, best first."""
    if beam_size < 1:
        raise ValidationError(f"beam_size must be positive, got {beam_size}")
    if not 1 <= top_k <= beam_size:
        raise ValidationError(
            f"top_k must be in [1, beam_size={beam_size}], got {top_k}"
        )
    cap = _generation_cap(model, max_len)
    base_state = model.encode([src_ids], direction)
    beams = [((), 0.0)]
    finished = []
    for _ in range(cap):
        state = _tile_state(base_state, len(beams))
        prefixes = np.array(
            [(BOS, *toks) for toks, _ in beams], dtype=np.int64
        )
        lp = step_logprobs(model, state, prefixes, direction)
        pool = []
        for bi, (toks, blp) in enumerate(beams):
            row = lp[bi]
            for v in range(row.shape[0]):
                pool.append((blp + row[v], v, bi))
        pool.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_beams = []
        n_finished = 0
        for sc, v, bi in pool:
            if len(new_beams) >= beam_size and n_finished >= beam_size:
                break
            toks = beams[bi][0] + (v,)
            if v == EOS:
                if n_finished < beam_size:
                    finished.append(
                        Candidate(toks, sc, sc / len(toks), finished_by_eos=True)
                    )
                    n_finished += 1
            elif len(new_beams) < beam_size:
                new_beams.append((toks, sc))
        beams = new_beams
        if not beams:
            break
    for toks, sc in beams:
        finished.append(Candidate(toks, sc, sc / len(toks), finished_by_eos=False))
    finished.sort(key=lambda c: (-c.norm_score, c.tokens))
    return finished[:top_k]


def greedy_decode_batch(model, src_list, max_len=None, direction="forward"):
    """Argmax decoding of a batch; returns per-row token lists (EOS kept)."""
    if not src_list:
        raise ValidationError("empty batch")
    cap = _generation_cap(model, max_len)
    state = model.encode(src_list, direction)
    b = len(src_list)
    prefixes = np.full((b, 1), BOS, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    outs = [[] for _ in range(b)]
    for _ in range(cap):
        lp = step_logprobs(model, state, prefixes, direction)
        nxt = lp.argmax(axis=-1)
        nxt = np.where(done, EOS, nxt)
        for i in range(b):
            if not done[i]:
                outs[i].append(int(nxt[i]))
                if nxt[i] == EOS:
                    done[i] = True
        if done.all():
            break
        prefixes = np.concatenate([prefixes, nxt[:, None]], axis=1)
    return outs


def sequence_logprob(model, src_ids, tokens, direction="forward"):
    """Teacher-forced cumulative log-probability of a token sequence."""
    if not len(tokens):
        raise ValidationError("cannot score an empty token sequence")
    state = model.encode([src_ids], direction)
    tgt_in = np.array([(BOS, *tokens[:-1])], dtype=np.int64)
    with no_grad():
        logits = model.decode_logits(state, tgt_in, direction, train=False)
    lp = _log_softmax(logits.data[0])
    return float(sum(lp[t, tok] for t, tok in enumerate(tokens)))
