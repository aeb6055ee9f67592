"""Pure-numpy reference implementations of the hot kernels.

Every function here has an @njit twin in numba_backend with identical
signatures and semantics; this module is the fallback when numba is
unavailable or CHRONOMT_BACKEND=numpy is set.

All 2-d inputs are C-contiguous with the reduced axis last.
"""

import numpy as np

NAME = "numpy"


def softmax_fwd(x):
    m = x.max(axis=-1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=-1, keepdims=True)
    return y


def softmax_bwd(y, gy):
    inner = (gy * y).sum(axis=-1, keepdims=True)
    return (gy - inner) * y


def layer_norm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    y = xhat * gain + bias
    return y, xhat, rstd[:, 0].astype(x.dtype, copy=False)


def layer_norm_bwd(gy, xhat, rstd, gain):
    h = gy * gain
    mean_h = h.mean(axis=-1, keepdims=True)
    mean_hx = (h * xhat).mean(axis=-1, keepdims=True)
    gx = rstd[:, None] * (h - mean_h - xhat * mean_hx)
    dgain = (gy * xhat).sum(axis=0)
    dbias = gy.sum(axis=0)
    return gx, dgain, dbias


def cross_entropy_fwd(logits, targets):
    """Per-row negative log-likelihood and the cached softmax."""
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    s = z.sum(axis=-1, keepdims=True)
    probs = z / s
    rows = np.arange(logits.shape[0])
    nll = (np.log(s[:, 0]) + m[:, 0]) - logits[rows, targets]
    return nll, probs


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def embedding_grad(gtable, ids, gout):
    np.add.at(gtable, ids, gout)
