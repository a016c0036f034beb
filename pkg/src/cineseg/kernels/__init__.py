"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when numba is importable, unless the environment
variable ``CINESEG_BACKEND=numpy`` selects the pure-numpy path. Both backends
accumulate in the same order and produce bit-identical results.
"""

import os

import numpy as np

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

BACKENDS = ("numba", "numpy")

_impl = _numpy


def set_backend(name):
    global _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and _numba is None:
        raise ValueError("numba backend requested but numba is not installed")
    _impl = _numba if name == "numba" else _numpy


def get_backend():
    return "numba" if _impl is _numba and _numba is not None else "numpy"


_requested = os.environ.get("CINESEG_BACKEND", "numba").strip().lower()
if _requested == "numba" and _numba is not None:
    set_backend("numba")
elif _requested in BACKENDS:
    set_backend("numpy")
else:
    raise ValueError(f"CINESEG_BACKEND={_requested!r}; expected one of {BACKENDS}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xp, k):
    """Unfold (n, ci, h, w) into a (ci*k*k, n*ho*wo) patch matrix."""
    return _impl.im2col(_f64(xp), k)


def col2im(dcols, n, ci, hp, wp, k):
    return _impl.col2im(_f64(dcols), n, ci, hp, wp, k)


def maxpool2_forward(x):
    return _impl.maxpool2_forward(_f64(x))


def maxpool2_backward(g, idx):
    return _impl.maxpool2_backward(_f64(g), np.ascontiguousarray(idx))


def bilinear_sample(img, rows, cols):
    return _impl.bilinear_sample(_f64(img), _f64(rows), _f64(cols))


def nearest_sample(img, rows, cols):
    return _impl.nearest_sample(np.ascontiguousarray(img), _f64(rows), _f64(cols))


def smooth_reflect(field, kernel):
    return _impl.smooth_reflect(_f64(field), _f64(kernel))


def nearest_distances(a, b, spacing):
    """Per-point distance from each row of ``a`` to its closest row of ``b``."""
    return _impl.nearest_distances(_f64(a).reshape(-1, 2), _f64(b).reshape(-1, 2), _f64(spacing))
