"""JIT-compiled convolution kernels.

All kernels take a pre-padded input and assume stride-only geometry, so the
loops carry no bounds checks. Internally they work in a channels-last layout
so the hot inner loop runs over the contiguous filter axis, which LLVM turns
into SIMD code; the layout shuffles in and out are cheap fills. Every
accumulator is updated in a fixed order by a single thread of control, so
results are bit-deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _filters_last(w):
    F, C, kh, kw = w.shape
    wt = np.empty((C, kh, kw, F), dtype=w.dtype)
    for f in range(F):
        for c in range(C):
            for ki in range(kh):
                for kj in range(kw):
                    wt[c, ki, kj, f] = w[f, c, ki, kj]
    return wt


@njit(cache=True, nogil=True)
def _channels_last(x):
    B, C, H, W = x.shape
    out = np.empty((B, H, W, C), dtype=x.dtype)
    for b in range(B):
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[b, i, j, c] = x[b, c, i, j]
    return out


@njit(cache=True, nogil=True)
def conv2d_forward(xp, w, stride):
    B, C, Hp, Wp = xp.shape
    F, _, kh, kw = w.shape
    oh = (Hp - kh) // stride + 1
    ow = (Wp - kw) // stride + 1
    wt = _filters_last(w)
    acc = np.zeros((B, oh, ow, F), dtype=xp.dtype)
    for b in range(B):
        for c in range(C):
            for ki in range(kh):
                for kj in range(kw):
                    for oi in range(oh):
                        ii = oi * stride + ki
                        for oj in range(ow):
                            xval = xp[b, c, ii, oj * stride + kj]
                            for f in range(F):
                                acc[b, oi, oj, f] += xval * wt[c, ki, kj, f]
    out = np.empty((B, F, oh, ow), dtype=xp.dtype)
    for b in range(B):
        for f in range(F):
            for oi in range(oh):
                for oj in range(ow):
                    out[b, f, oi, oj] = acc[b, oi, oj, f]
    return out


@njit(cache=True, nogil=True)
def conv2d_backward_input(dout, w, stride, Hp, Wp):
    B, F, oh, ow = dout.shape
    _, C, kh, kw = w.shape
    # Channels-last weight copy: the inner accumulate runs over contiguous c.
    wc = np.empty((F, kh, kw, C), dtype=w.dtype)
    for f in range(F):
        for c in range(C):
            for ki in range(kh):
                for kj in range(kw):
                    wc[f, ki, kj, c] = w[f, c, ki, kj]
    acc = np.zeros((B, Hp, Wp, C), dtype=dout.dtype)
    for b in range(B):
        for f in range(F):
            for ki in range(kh):
                for kj in range(kw):
                    for oi in range(oh):
                        ii = oi * stride + ki
                        for oj in range(ow):
                            dval = dout[b, f, oi, oj]
                            jj = oj * stride + kj
                            for c in range(C):
                                acc[b, ii, jj, c] += dval * wc[f, ki, kj, c]
    dxp = np.empty((B, C, Hp, Wp), dtype=dout.dtype)
    for b in range(B):
        for c in range(C):
            for i in range(Hp):
                for j in range(Wp):
                    dxp[b, c, i, j] = acc[b, i, j, c]
    return dxp


@njit(cache=True, nogil=True)
def conv2d_backward_kernel(dout, xp, stride, kh, kw):
    B, F, oh, ow = dout.shape
    _, C, Hp, Wp = xp.shape
    dout_t = _channels_last(dout)
    dwt = np.zeros((C, kh, kw, F), dtype=dout.dtype)
    for b in range(B):
        for c in range(C):
            for ki in range(kh):
                for kj in range(kw):
                    for oi in range(oh):
                        ii = oi * stride + ki
                        for oj in range(ow):
                            xval = xp[b, c, ii, oj * stride + kj]
                            for f in range(F):
                                dwt[c, ki, kj, f] += xval * dout_t[b, oi, oj, f]
    dw = np.empty((F, C, kh, kw), dtype=dout.dtype)
    for f in range(F):
        for c in range(C):
            for ki in range(kh):
                for kj in range(kw):
                    dw[f, c, ki, kj] = dwt[c, ki, kj, f]
    return dw
