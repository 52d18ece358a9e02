"""Numpy fallback for the convolution hot kernels.

All three kernels operate on an already zero-padded input ``xp`` and use a
fixed accumulation order (a loop over kernel offsets wrapping one BLAS
contraction each), so repeated runs on the same machine produce identical
bytes.
"""

import numpy as np

NAME = "numpy"


def _shifted_view(xp, dy, dx, ho, wo, stride):
    return xp[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
              dx : dx + (wo - 1) * stride + 1 : stride]


def conv_forward(xp, w, stride):
    """Correlate padded input (N,Ci,Hp,Wp) with w (Co,Ci,kh,kw)."""
    n, _, hp, wp = xp.shape
    co, _, kh, kw = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=xp.dtype)
    for dy in range(kh):
        for dx in range(kw):
            xs = _shifted_view(xp, dy, dx, ho, wo, stride)
            out += np.tensordot(w[:, :, dy, dx], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
    return out


def conv_grad_input(gy, w, xp_shape, stride):
    """Scatter grad_out back onto the padded-input layout."""
    _, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    for dy in range(kh):
        for dx in range(kw):
            t = np.tensordot(w[:, :, dy, dx], gy, axes=([0], [1])).transpose(1, 0, 2, 3)
            gxp[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
                dx : dx + (wo - 1) * stride + 1 : stride] += t
    return gxp


def conv_grad_weight(gy, xp, w_shape, stride):
    co, ci, kh, kw = w_shape
    ho, wo = gy.shape[2], gy.shape[3]
    gw = np.empty(w_shape, dtype=gy.dtype)
    for dy in range(kh):
        for dx in range(kw):
            xs = _shifted_view(xp, dy, dx, ho, wo, stride)
            gw[:, :, dy, dx] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw
