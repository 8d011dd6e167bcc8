"""Selects the row-kernel implementation at import time.

Set the environment variable DPDFD_BACKEND to "numpy" or "numba" before
importing the package to force a path; the default ("auto") uses numba
when it imports cleanly and falls back to numpy otherwise. Within one
backend all results are bit-reproducible; across backends they agree only
to floating-point roundoff, because summation orders differ.

`benchmarks/bench_kernels.py` times the two paths side by side.
"""

import os

from . import _kernels_numpy
from .errors import ValidationError

_ENV_VAR = "DPDFD_BACKEND"


def _select():
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValidationError(
            f"{_ENV_VAR} must be one of auto/numba/numpy, got {choice!r}"
        )
    if choice == "numpy":
        return _kernels_numpy, "numpy"
    try:
        from . import _kernels_numba
    except ImportError:
        if choice == "numba":
            raise
        return _kernels_numpy, "numpy"
    return _kernels_numba, "numba"


_impl, _name = _select()


def active_backend():
    """Name of the kernel backend selected at import ("numba" or "numpy")."""
    return _name


row_norms = _impl.row_norms
normalize_rows = _impl.normalize_rows
clip_rows = _impl.clip_rows
softmax_rows = _impl.softmax_rows
log_softmax_rows = _impl.log_softmax_rows
softmax_xent = _impl.softmax_xent
