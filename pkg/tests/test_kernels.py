import os
import subprocess
import sys

import numpy as np
import pytest

from erinet import kernels
from erinet.errors import ConfigInvalid


@pytest.fixture(autouse=True)
def restore_backend():
    previous = kernels.active_backend()
    yield
    kernels.set_backend(previous)


def _random_case(rng, stride, padding):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    dout_shape = kernels.conv2d_forward(x, w, stride, padding).shape
    dout = rng.normal(size=dout_shape)
    return x, w, dout


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
def test_backends_agree(stride, padding):
    rng = np.random.default_rng(42)
    x, w, dout = _random_case(rng, stride, padding)
    results = {}
    for name in kernels.BACKENDS:
        kernels.set_backend(name)
        results[name] = (
            kernels.conv2d_forward(x, w, stride, padding),
            kernels.conv2d_backward_input(dout, w, stride, padding, x.shape[2], x.shape[3]),
            kernels.conv2d_backward_kernel(dout, x, stride, padding, w.shape[2], w.shape[3]),
        )
    for a, b in zip(results["numba"], results["numpy"]):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_unknown_backend_rejected():
    with pytest.raises(ConfigInvalid):
        kernels.set_backend("fortran")


def test_env_flag_selects_backend():
    code = "import erinet.kernels as k; print(k.active_backend())"
    env = dict(os.environ, ERINET_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"


def test_float32_and_float64_supported():
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        x = rng.normal(size=(1, 2, 5, 5)).astype(dtype)
        w = rng.normal(size=(2, 2, 3, 3)).astype(dtype)
        out = kernels.conv2d_forward(x, w, 1, 1)
        assert out.dtype == dtype
        assert out.shape == (1, 2, 5, 5)
