"""Pure-numpy convolution kernels (im2col form).

Fallback path for machines without a working numba install, and the reference
the JIT kernels are benchmarked against. Takes the same pre-padded inputs as
the JIT kernels.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _window_view(xp, kh, kw, stride):
    """Read-only sliding-window view of shape [B, C, oh, ow, kh, kw]."""
    B, C, Hp, Wp = xp.shape
    oh = (Hp - kh) // stride + 1
    ow = (Wp - kw) // stride + 1
    sb, sc, sh, sw = xp.strides
    shape = (B, C, oh, ow, kh, kw)
    strides = (sb, sc, sh * stride, sw * stride, sh, sw)
    return as_strided(xp, shape=shape, strides=strides, writeable=False)


def conv2d_forward(xp, w, stride):
    F = w.shape[0]
    win = _window_view(xp, w.shape[2], w.shape[3], stride)
    B, C, oh, ow, kh, kw = win.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, oh * ow, C * kh * kw)
    out = cols @ w.reshape(F, -1).T
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(B, F, oh, ow))


def conv2d_backward_input(dout, w, stride, Hp, Wp):
    B, F, oh, ow = dout.shape
    _, C, kh, kw = w.shape
    dout2 = dout.transpose(0, 2, 3, 1).reshape(B, oh * ow, F)
    dcols = (dout2 @ w.reshape(F, -1)).reshape(B, oh, ow, C, kh, kw)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)  # [B, C, oh, ow, kh, kw]
    dxp = np.zeros((B, C, Hp, Wp), dtype=dout.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[..., ki, kj]
    return dxp


def conv2d_backward_kernel(dout, xp, stride, kh, kw):
    B, F, oh, ow = dout.shape
    C = xp.shape[1]
    win = _window_view(xp, kh, kw, stride)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, oh * ow, C * kh * kw)
    dout2 = dout.transpose(0, 2, 3, 1).reshape(B, oh * ow, F)
    dw = np.einsum("bnf,bnk->fk", dout2, cols)
    return np.ascontiguousarray(dw.reshape(F, C, kh, kw))
