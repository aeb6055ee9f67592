"""Parameter store, Adam with bias correction, and the LR schedule."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .autodiff import Tensor
from .errors import DivergenceError, ValidationError


class ParameterStore:
    """Named trainable tensors plus per-parameter Adam moments.

    Weight matrices init uniform +-1/sqrt(fan_in) where fan_in is the
    input dimension of the matmul; embedding tables use their row width
    as fan_in so the lookup output scale matches.  Gains start at one,
    biases at zero.
    """

    def __init__(self, dtype=np.float32, seed=0):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self._rng = np.random.default_rng(seed)

    def create(self, name, shape, kind="matmul"):
        if name in self.params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if kind == "matmul":
            bound = 1.0 / math.sqrt(shape[0])
            data = self._rng.uniform(-bound, bound, size=shape)
        elif kind == "embedding":
            bound = 1.0 / math.sqrt(shape[-1])
            data = self._rng.uniform(-bound, bound, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            raise ValidationError(f"unknown init kind {kind!r}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def parameter_count(self):
        return sum(t.size for t in self.params.values())

    def state_arrays(self):
        """Flat name -> array view of everything a checkpoint must hold."""
        out = {}
        for name, t in self.params.items():
            out[f"param/{name}"] = t.data
        for name, arr in self.m.items():
            out[f"adam_m/{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam_v/{name}"] = arr
        return out

    def load_state_arrays(self, arrays, step_count):
        for name, t in self.params.items():
            key = f"param/{name}"
            if key not in arrays:
                raise ValidationError(f"checkpoint is missing parameter {name!r}")
            src = arrays[key]
            if src.shape != t.data.shape:
                raise ValidationError(
                    f"checkpoint shape {src.shape} does not match parameter "
                    f"{name!r} with shape {t.data.shape}"
                )
            t.data = src.astype(self.dtype, copy=True)
            t.grad = None
        self.m = {
            k[len("adam_m/"):]: arrays[k].copy()
            for k in arrays
            if k.startswith("adam_m/")
        }
        self.v = {
            k[len("adam_v/"):]: arrays[k].copy()
            for k in arrays
            if k.startswith("adam_v/")
        }
        self.step_count = int(step_count)


def global_grad_norm(store):
    total = 0.0
    for t in store.params.values():
        if t.grad is not None:
            g = np.asarray(t.grad, dtype=np.float64)
            total += float((g * g).sum())
    return math.sqrt(total)


def clip_grad_norm(store, max_norm):
    """Scale all grads so their global L2 norm is at most max_norm."""
    norm = global_grad_norm(store)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for t in store.params.values():
            if t.grad is not None:
                t.grad = t.grad * t.data.dtype.type(factor)
    return norm


def adam_step(store, lr, betas=(0.9, 0.98), eps=1e-8):
    """One Adam update over every parameter that has a gradient.

    Checks all gradients for NaN/Inf before touching any parameter so a
    divergent step leaves the store unmodified; grads are cleared after
    a successful step.
    """
    beta1, beta2 = betas
    live = []
    for name, t in store.params.items():
        if t.grad is None:
            continue
        g = np.ascontiguousarray(t.grad, dtype=t.data.dtype)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in parameter {name!r} at step "
                f"{store.step_count + 1}"
            )
        live.append((name, t, g))
    t_step = store.step_count + 1
    bc1 = 1.0 - beta1**t_step
    bc2 = 1.0 - beta2**t_step
    for name, t, g in live:
        if name not in store.m:
            store.m[name] = np.zeros_like(t.data)
            store.v[name] = np.zeros_like(t.data)
        kernels.adam_update(
            t.data.reshape(-1),
            g.reshape(-1),
            store.m[name].reshape(-1),
            store.v[name].reshape(-1),
            float(lr),
            float(beta1),
            float(beta2),
            float(eps),
            float(bc1),
            float(bc2),
        )
        t.grad = None
    store.step_count = t_step


def lr_at(step, peak_lr, warmup_steps):
    """Linear warmup to peak_lr, then inverse square-root decay."""
    if step < 1:
        raise ValidationError("lr schedule steps are 1-indexed")
    if warmup_steps < 1:
        return peak_lr / math.sqrt(step)
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))
