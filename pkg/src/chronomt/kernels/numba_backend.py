"""Fast backend: numba-compiled kernels where the jit actually pays.

Serial loops only: on the single-core target prange buys nothing and
serial order keeps reductions bit-reproducible between runs.  Each jit
function specializes lazily per dtype (float32 for training, float64
for gradient checks); reductions accumulate in float64 either way.

softmax_fwd, cross_entropy_fwd and adam_update are delegated to the
numpy implementations: they are exp-bound or purely elementwise, and
numpy's vectorized transcendentals beat scalar libm calls inside jit
loops on this target (see benchmarks/bench_kernels.py).  The jit wins
are the fused reductions (softmax_bwd, layer_norm_*) and the
scatter-add (embedding_grad, ~50x over np.add.at).
"""

import numpy as np
from numba import njit

from .numpy_backend import adam_update, cross_entropy_fwd, softmax_fwd

__all__ = [
    "NAME",
    "softmax_fwd",
    "softmax_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "cross_entropy_fwd",
    "adam_update",
    "embedding_grad",
]

NAME = "numba"


@njit(cache=True)
def softmax_bwd(y, gy):
    n, d = y.shape
    gx = np.empty_like(y)
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = (gy[i, j] - inner) * y[i, j]
    return gx


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mean
            var += diff * diff
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mean) * r
            xhat[i, j] = h
            y[i, j] = h * gain[j] + bias[j]
    return y, xhat, rstd


@njit(cache=True)
def layer_norm_bwd(gy, xhat, rstd, gain):
    n, d = gy.shape
    gx = np.empty_like(gy)
    dgain = np.zeros(d, dtype=gy.dtype)
    dbias = np.zeros(d, dtype=gy.dtype)
    for i in range(n):
        mean_h = 0.0
        mean_hx = 0.0
        for j in range(d):
            h = gy[i, j] * gain[j]
            mean_h += h
            mean_hx += h * xhat[i, j]
        mean_h /= d
        mean_hx /= d
        for j in range(d):
            h = gy[i, j] * gain[j]
            gx[i, j] = rstd[i] * (h - mean_h - xhat[i, j] * mean_hx)
            dgain[j] += gy[i, j] * xhat[i, j]
            dbias[j] += gy[i, j]
    return gx, dgain, dbias


@njit(cache=True)
def embedding_grad(gtable, ids, gout):
    n = ids.shape[0]
    d = gtable.shape[1]
    for i in range(n):
        row = ids[i]
        for j in range(d):
            gtable[row, j] += gout[i, j]
