import numpy as np
import pytest

from chronomt.errors import DivergenceError, ValidationError
from chronomt.optim import (
    ParameterStore,
    adam_step,
    clip_grad_norm,
    global_grad_norm,
    lr_at,
)


def make_store(dtype=np.float64):
    store = ParameterStore(dtype=dtype, seed=0)
    store.create("w", (3, 2), kind="matmul")
    store.create("b", (2,), kind="zeros")
    return store


def test_create_kinds_and_duplicates():
    store = ParameterStore(dtype=np.float32, seed=1)
    w = store.create("w", (8, 4), kind="matmul")
    e = store.create("e", (10, 4), kind="embedding")
    z = store.create("z", (4,), kind="zeros")
    o = store.create("o", (4,), kind="ones")
    assert np.abs(w.data).max() <= 1 / np.sqrt(8) + 1e-7
    assert np.abs(e.data).max() <= 1 / np.sqrt(4) + 1e-7
    assert np.all(z.data == 0) and np.all(o.data == 1)
    assert all(t.data.dtype == np.float32 for t in (w, e, z, o))
    assert store.parameter_count() == 8 * 4 + 10 * 4 + 4 + 4
    with pytest.raises(ValidationError):
        store.create("w", (2, 2))
    with pytest.raises(ValidationError):
        store.create("q", (2, 2), kind="diagonal")


def test_adam_step_closed_form():
    store = make_store()
    w = store["w"]
    w.grad = np.ones_like(w.data)
    before_b = store["b"].data.copy()
    p0 = w.data.copy()
    adam_step(store, lr=0.1, betas=(0.9, 0.98), eps=1e-8)
    m = 0.1 * 1.0  # (1-beta1)*g
    v = 0.02 * 1.0
    expect = p0 - 0.1 * (m / (1 - 0.9)) / (np.sqrt(v / (1 - 0.98)) + 1e-8)
    np.testing.assert_allclose(w.data, expect, rtol=0, atol=1e-12)
    # parameter without a grad stays untouched and gets no moments
    np.testing.assert_array_equal(store["b"].data, before_b)
    assert "b" not in store.m
    assert w.grad is None
    assert store.step_count == 1


def test_adam_divergence_leaves_store_unmodified():
    store = make_store()
    store["w"].grad = np.ones_like(store["w"].data)
    store["b"].grad = np.array([1.0, np.inf])
    snap = {n: store[n].data.copy() for n in store.names()}
    with pytest.raises(DivergenceError) as err:
        adam_step(store, lr=0.1)
    assert "'b'" in str(err.value) and "step 1" in str(err.value)
    for n in store.names():
        np.testing.assert_array_equal(store[n].data, snap[n])
    assert store.step_count == 0
    assert not store.m  # no moments were initialized


def test_adam_bias_correction_over_steps():
    store = ParameterStore(dtype=np.float64, seed=0)
    p = store.create("p", (1,), kind="zeros")
    m = v = 0.0
    x = 0.0
    for step in range(1, 6):
        g = float(step)
        p.grad = np.array([g])
        adam_step(store, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.98 * v + 0.02 * g * g
        x -= 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.98**step)) + 1e-8)
        np.testing.assert_allclose(p.data, [x], rtol=0, atol=1e-12)
    assert store.step_count == 5


def test_grad_norm_and_clipping():
    store = make_store()
    store["w"].grad = np.full((3, 2), 3.0)
    store["b"].grad = np.full((2,), 4.0)
    norm = global_grad_norm(store)
    np.testing.assert_allclose(norm, np.sqrt(9 * 6 + 16 * 2), rtol=0, atol=1e-12)
    clipped = clip_grad_norm(store, max_norm=1.0)
    np.testing.assert_allclose(clipped, norm, rtol=0, atol=1e-12)
    np.testing.assert_allclose(global_grad_norm(store), 1.0, rtol=0, atol=1e-9)
    # under the cap nothing changes
    g = store["w"].grad.copy()
    clip_grad_norm(store, max_norm=100.0)
    np.testing.assert_array_equal(store["w"].grad, g)


def test_zero_grads():
    store = make_store()
    store["w"].grad = np.ones_like(store["w"].data)
    store.zero_grads()
    assert store["w"].grad is None and store["b"].grad is None


def test_state_round_trip():
    store = make_store(dtype=np.float32)
    store["w"].grad = np.ones_like(store["w"].data)
    store["b"].grad = np.ones_like(store["b"].data)
    adam_step(store, lr=0.05)
    arrays = store.state_arrays()
    assert set(arrays) == {
        "param/w",
        "param/b",
        "adam_m/w",
        "adam_m/b",
        "adam_v/w",
        "adam_v/b",
    }
    clone = make_store(dtype=np.float32)
    clone.load_state_arrays(arrays, step_count=store.step_count)
    for n in store.names():
        np.testing.assert_array_equal(clone[n].data, store[n].data)
        np.testing.assert_array_equal(clone.m[n], store.m[n])
    assert clone.step_count == 1
    bad = dict(arrays)
    bad["param/w"] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValidationError):
        make_store(np.float32).load_state_arrays(bad, step_count=1)


def test_lr_schedule():
    peak, warm = 3e-3, 200
    assert lr_at(1, peak, warm) == pytest.approx(peak / 200)
    assert lr_at(200, peak, warm) == pytest.approx(peak)
    assert lr_at(800, peak, warm) == pytest.approx(peak / 2)
    # monotone rise then fall around the peak
    assert lr_at(100, peak, warm) < lr_at(200, peak, warm)
    assert lr_at(201, peak, warm) < lr_at(200, peak, warm)
    with pytest.raises(ValidationError):
        lr_at(0, peak, warm)
