"""Backend dispatch for the hot convolution kernels.

Two implementations exist: JIT-compiled loops (numba, the default) and a
pure-numpy im2col path. Select with the ``ERINET_BACKEND`` environment
variable (``numba`` or ``numpy``) before import, or at runtime with
:func:`set_backend`. Both paths are deterministic; ``benchmarks/bench_kernels.py``
compares their speed.

The public functions here operate on *unpadded* inputs and handle padding,
so callers never see the padded geometry.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigInvalid

BACKENDS = ("numba", "numpy")

_impl = None
_backend_name = ""


def _load(name: str):
    if name == "numba":
        from . import _kernels_numba as mod
    elif name == "numpy":
        from . import _kernels_numpy as mod
    else:
        raise ConfigInvalid(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")
    return mod


def set_backend(name: str) -> None:
    """Switch the active kernel backend at runtime."""
    global _impl, _backend_name
    _impl = _load(name)
    _backend_name = name


def active_backend() -> str:
    return _backend_name


def _init_from_env() -> None:
    requested = os.environ.get("ERINET_BACKEND", "").strip().lower()
    if requested:
        set_backend(requested)
        return
    try:
        set_backend("numba")
    except ImportError:
        set_backend("numpy")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    xp = _pad(x, padding)
    return _impl.conv2d_forward(xp, np.ascontiguousarray(w), stride)


def conv2d_backward_input(
    dout: np.ndarray, w: np.ndarray, stride: int, padding: int, in_h: int, in_w: int
) -> np.ndarray:
    dxp = _impl.conv2d_backward_input(
        np.ascontiguousarray(dout), np.ascontiguousarray(w), stride, in_h + 2 * padding, in_w + 2 * padding
    )
    if padding == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])


def conv2d_backward_kernel(
    dout: np.ndarray, x: np.ndarray, stride: int, padding: int, kh: int, kw: int
) -> np.ndarray:
    xp = _pad(x, padding)
    return _impl.conv2d_backward_kernel(np.ascontiguousarray(dout), xp, stride, kh, kw)


_init_from_env()
