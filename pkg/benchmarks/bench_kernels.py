"""Timing comparison of the numpy and numba kernel backends.

Runs each hot kernel on shapes typical for the small translation
models (batch*seq rows of model_dim / vocab columns) and prints a
table of per-call wall times plus the speedup factor.

Usage:
    python benchmarks/bench_kernels.py [--rows 2048] [--dim 64]
        [--vocab 512] [--repeat 200]
"""

import argparse
import time

import numpy as np

from chronomt.kernels import load_backend


def _timeit(fn, repeat):
    # one untimed call to trigger jit compilation / cache warmup
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def build_cases(rows, dim, vocab, dtype=np.float32):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((rows, dim)).astype(dtype)
    logits = rng.standard_normal((rows, vocab)).astype(dtype)
    y = np.exp(logits - logits.max(axis=1, keepdims=True))
    y /= y.sum(axis=1, keepdims=True)
    gy = rng.standard_normal((rows, vocab)).astype(dtype)
    gain = rng.standard_normal(dim).astype(dtype)
    bias = rng.standard_normal(dim).astype(dtype)
    gx = rng.standard_normal((rows, dim)).astype(dtype)
    targets = rng.integers(0, vocab, size=rows)
    p = rng.standard_normal(rows * dim).astype(dtype)
    g = rng.standard_normal(rows * dim).astype(dtype)
    m = np.zeros(rows * dim, dtype=dtype)
    v = np.zeros(rows * dim, dtype=dtype)
    ids = rng.integers(0, vocab, size=rows)
    gout = rng.standard_normal((rows, dim)).astype(dtype)

    def cases(k):
        xhat_rstd = {}

        def ln_fwd():
            out = k.layer_norm_fwd(x, gain, bias, 1e-6)
            xhat_rstd["xhat"], xhat_rstd["rstd"] = out[1], out[2]
            return out

        ln_fwd()
        return [
            ("softmax_fwd", lambda: k.softmax_fwd(logits)),
            ("softmax_bwd", lambda: k.softmax_bwd(y, gy)),
            ("layer_norm_fwd", ln_fwd),
            (
                "layer_norm_bwd",
                lambda: k.layer_norm_bwd(gx, xhat_rstd["xhat"], xhat_rstd["rstd"], gain),
            ),
            ("cross_entropy_fwd", lambda: k.cross_entropy_fwd(logits, targets)),
            (
                "adam_update",
                lambda: k.adam_update(
                    p, g, m, v, 1e-3, 0.9, 0.98, 1e-8, 0.1, 0.02
                ),
            ),
            (
                "embedding_grad",
                lambda: k.embedding_grad(
                    np.zeros((vocab, dim), dtype=dtype), ids, gout
                ),
            ),
        ]

    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--vocab", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    np_backend = load_backend("numpy")
    try:
        nb_backend = load_backend("numba")
    except ImportError:
        nb_backend = None
        print("numba not importable; timing numpy backend only")

    cases = build_cases(args.rows, args.dim, args.vocab)
    header = f"{'kernel':<20} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>8}"
    print(f"rows={args.rows} dim={args.dim} vocab={args.vocab} repeat={args.repeat}")
    print(header)
    print("-" * len(header))
    np_cases = cases(np_backend)
    nb_cases = cases(nb_backend) if nb_backend else None
    for i, (name, fn) in enumerate(np_cases):
        t_np = _timeit(fn, args.repeat) * 1e6
        if nb_cases:
            t_nb = _timeit(nb_cases[i][1], args.repeat) * 1e6
            print(f"{name:<20} {t_np:>12.1f} {t_nb:>12.1f} {t_np / t_nb:>7.2f}x")
        else:
            print(f"{name:<20} {t_np:>12.1f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
