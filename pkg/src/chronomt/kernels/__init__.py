"""Backend dispatch for the hot numeric kernels.

CHRONOMT_BACKEND=numpy forces the pure-numpy reference kernels;
CHRONOMT_BACKEND=numba forces the jit kernels (import error if numba
is missing).  Unset, numba is used when importable.  Selection happens
once at import time so a whole process runs a single backend.
"""

import os

from ..errors import ValidationError
from . import numpy_backend

_CHOICE = os.environ.get("CHRONOMT_BACKEND", "").strip().lower()
if _CHOICE not in ("", "numba", "numpy"):
    raise ValidationError(
        f"CHRONOMT_BACKEND must be 'numba' or 'numpy', got {_CHOICE!r}"
    )

if _CHOICE == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _CHOICE == "numba":
            raise
        _impl = numpy_backend

BACKEND = _impl.NAME

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
cross_entropy_fwd = _impl.cross_entropy_fwd
adam_update = _impl.adam_update
embedding_grad = _impl.embedding_grad


def load_backend(name):
    """Import a specific backend module by name (for tests and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        from . import numba_backend

        return numba_backend
    raise ValidationError(f"unknown kernel backend {name!r}")
