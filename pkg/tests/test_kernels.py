import numpy as np
import pytest

from chronomt import kernels
from chronomt.errors import ValidationError
from chronomt.kernels import load_backend

np_k = load_backend("numpy")
try:
    nb_k = load_backend("numba")
except ImportError:  # pragma: no cover - numba present in the dev env
    nb_k = None

BACKENDS = [np_k] + ([nb_k] if nb_k is not None else [])
IDS = [k.NAME for k in BACKENDS]


def _softmax_inputs(rng, dtype):
    return (rng.standard_normal((9, 13)) * 3).astype(dtype)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_softmax_rows_normalized(k, dtype, rng):
    x = _softmax_inputs(rng, dtype)
    y = k.softmax_fwd(x)
    assert y.dtype == dtype
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-5)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_softmax_shift_invariance(k, rng):
    x = rng.standard_normal((4, 7))
    np.testing.assert_allclose(
        k.softmax_fwd(x), k.softmax_fwd(x + 123.0), rtol=0, atol=1e-12
    )


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_layer_norm_normalizes(k, rng):
    x = rng.standard_normal((6, 16)) * 5 + 2
    gain = np.ones(16)
    bias = np.zeros(16)
    y, xhat, rstd = k.layer_norm_fwd(x, gain, bias, 1e-6)
    np.testing.assert_allclose(y, xhat, rtol=0, atol=1e-12)
    np.testing.assert_allclose(xhat.mean(axis=1), 0.0, rtol=0, atol=1e-10)
    np.testing.assert_allclose(xhat.var(axis=1), 1.0, rtol=0, atol=1e-5)
    assert rstd.shape == (6,)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_cross_entropy_matches_log_softmax(k, rng):
    logits = rng.standard_normal((8, 11)) * 2
    targets = rng.integers(0, 11, size=8)
    nll, probs = k.cross_entropy_fwd(logits, targets)
    shifted = logits - logits.max(axis=1, keepdims=True)
    ref_probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    ref_nll = -np.log(ref_probs[np.arange(8), targets])
    np.testing.assert_allclose(probs, ref_probs, rtol=0, atol=1e-12)
    np.testing.assert_allclose(nll, ref_nll, rtol=0, atol=1e-10)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_adam_update_closed_form(k):
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 3.0])
    m = np.array([0.1, 0.0])
    v = np.array([0.2, 0.0])
    lr, b1, b2, eps = 1e-2, 0.9, 0.98, 1e-8
    bc1, bc2 = 1 - b1**3, 1 - b2**3
    m_ref = b1 * m + (1 - b1) * g
    v_ref = b2 * v + (1 - b2) * g * g
    p_ref = p - lr * (m_ref / bc1) / (np.sqrt(v_ref / bc2) + eps)
    k.adam_update(p, g, m, v, lr, b1, b2, eps, bc1, bc2)
    np.testing.assert_allclose(m, m_ref, rtol=0, atol=1e-14)
    np.testing.assert_allclose(v, v_ref, rtol=0, atol=1e-14)
    np.testing.assert_allclose(p, p_ref, rtol=0, atol=1e-14)


@pytest.mark.parametrize("k", BACKENDS, ids=IDS)
def test_embedding_grad_repeated_ids(k, rng):
    gtable = np.zeros((5, 3))
    ids = np.array([1, 4, 1, 1, 0])
    gout = rng.standard_normal((5, 3))
    ref = np.zeros_like(gtable)
    np.add.at(ref, ids, gout)
    k.embedding_grad(gtable, ids, gout)
    np.testing.assert_allclose(gtable, ref, rtol=0, atol=1e-12)


@pytest.mark.skipif(nb_k is None, reason="numba backend not importable")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backend_parity(dtype, rng):
    tol = 1e-5 if dtype == np.float32 else 1e-12
    x = _softmax_inputs(rng, dtype)
    np.testing.assert_allclose(
        np_k.softmax_fwd(x), nb_k.softmax_fwd(x), rtol=0, atol=tol
    )
    y = np_k.softmax_fwd(x)
    gy = rng.standard_normal(x.shape).astype(dtype)
    np.testing.assert_allclose(
        np_k.softmax_bwd(y, gy), nb_k.softmax_bwd(y, gy), rtol=0, atol=tol
    )
    gain = rng.standard_normal(x.shape[1]).astype(dtype)
    bias = rng.standard_normal(x.shape[1]).astype(dtype)
    out_np = np_k.layer_norm_fwd(x, gain, bias, 1e-6)
    out_nb = nb_k.layer_norm_fwd(x, gain, bias, 1e-6)
    for a, b in zip(out_np, out_nb):
        np.testing.assert_allclose(a, b, rtol=0, atol=tol)
    bwd_np = np_k.layer_norm_bwd(gy, out_np[1], out_np[2], gain)
    bwd_nb = nb_k.layer_norm_bwd(gy, out_np[1], out_np[2], gain)
    for a, b in zip(bwd_np, bwd_nb):
        np.testing.assert_allclose(a, b, rtol=0, atol=tol * 4)
    targets = rng.integers(0, x.shape[1], size=x.shape[0])
    nll_np, p_np = np_k.cross_entropy_fwd(x, targets)
    nll_nb, p_nb = nb_k.cross_entropy_fwd(x, targets)
    np.testing.assert_allclose(nll_np, nll_nb, rtol=0, atol=tol)
    np.testing.assert_allclose(p_np, p_nb, rtol=0, atol=tol)
    gtable_np = np.zeros((7, 4), dtype=dtype)
    gtable_nb = np.zeros((7, 4), dtype=dtype)
    ids = rng.integers(0, 7, size=9)
    gout = rng.standard_normal((9, 4)).astype(dtype)
    np_k.embedding_grad(gtable_np, ids, gout)
    nb_k.embedding_grad(gtable_nb, ids, gout)
    np.testing.assert_allclose(gtable_np, gtable_nb, rtol=0, atol=tol)


def test_active_backend_exports():
    assert kernels.BACKEND in ("numpy", "numba")
    for name in (
        "softmax_fwd",
        "softmax_bwd",
        "layer_norm_fwd",
        "layer_norm_bwd",
        "cross_entropy_fwd",
        "adam_update",
        "embedding_grad",
    ):
        assert callable(getattr(kernels, name))


def test_load_backend_rejects_unknown():
    with pytest.raises(ValidationError):
        load_backend("cuda")
