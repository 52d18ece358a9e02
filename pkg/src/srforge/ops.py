"""Differentiable primitive operations on (N,C,H,W) arrays.

Every operation here has a hand-derived backward companion; models are
assembled from this closed set.  Forward functions are pure; backward
functions optionally accumulate (+=) into the ``grad`` of Parameters they
are given.  All accumulation orders are fixed, so results are reproducible
bit-for-bit across runs.
"""

import numpy as np

from ._kernels import conv_forward, conv_grad_input, conv_grad_weight
from .errors import InvalidArgumentError
from .tensor import Parameter, as_nchw, require_same_shape


def _value(p):
    return p.value if isinstance(p, Parameter) else np.asarray(p)


# ---------------------------------------------------------------------------
# Convolution (cross-correlation, zero padding)
# ---------------------------------------------------------------------------

def _conv_out_extent(extent, k, pad, stride, axis):
    span = extent + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise InvalidArgumentError(
            f"conv2d: {axis} extent {extent} with kernel {k}, padding {pad}, "
            f"stride {stride} gives a non-integral output extent"
        )
    return span // stride + 1


def _check_conv_args(x, w, stride, padding):
    if w.ndim != 4:
        raise InvalidArgumentError(f"conv2d: weight must be 4-D, got ndim={w.ndim}")
    if x.shape[1] != w.shape[1]:
        raise InvalidArgumentError(
            f"conv2d: input has {x.shape[1]} channels but weight expects {w.shape[1]}"
        )
    if stride < 1:
        raise InvalidArgumentError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise InvalidArgumentError(f"conv2d: padding must be nonnegative, got {padding}")


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``weight`` is (C_out, C_in, kH, kW); ``bias`` broadcasts over (N, C, H, W)
    as a (1, C_out, 1, 1) tensor.  Output extents must come out exactly:
    (H + 2*padding - kH) must be divisible by ``stride``.
    """
    x = as_nchw(x, "conv2d input")
    w = _value(weight)
    _check_conv_args(x, w, stride, padding)
    _conv_out_extent(x.shape[2], w.shape[2], padding, stride, "height")
    _conv_out_extent(x.shape[3], w.shape[3], padding, stride, "width")
    y = conv_forward(_pad(x, padding), np.ascontiguousarray(w), stride)
    if bias is not None:
        b = _value(bias)
        y += b.reshape(1, -1, 1, 1)
    return y


def conv2d_backward(grad_out, saved_input, weight, bias=None, stride=1, padding=0):
    """Backward pass of conv2d.

    Returns (grad_input, grad_weight, grad_bias); when ``weight``/``bias``
    are Parameters the weight/bias gradients are also accumulated into their
    ``grad`` fields.
    """
    x = as_nchw(saved_input, "conv2d saved_input")
    w = _value(weight)
    _check_conv_args(x, w, stride, padding)
    ho = _conv_out_extent(x.shape[2], w.shape[2], padding, stride, "height")
    wo = _conv_out_extent(x.shape[3], w.shape[3], padding, stride, "width")
    expected = (x.shape[0], w.shape[0], ho, wo)
    if grad_out.shape != expected:
        raise InvalidArgumentError(
            f"conv2d_backward: grad_out shape {grad_out.shape} does not match "
            f"forward output shape {expected}"
        )
    gy = np.ascontiguousarray(grad_out)
    xp = _pad(x, padding)
    w = np.ascontiguousarray(w)

    gxp = conv_grad_input(gy, w, xp.shape, stride)
    if padding:
        gx = np.ascontiguousarray(gxp[:, :, padding:-padding, padding:-padding])
    else:
        gx = gxp
    gw = conv_grad_weight(gy, xp, w.shape, stride)
    gb = gy.sum(axis=(0, 2, 3))

    if isinstance(weight, Parameter):
        weight.grad += gw.reshape(weight.grad.shape)
    if isinstance(bias, Parameter):
        bias.grad += gb.reshape(bias.grad.shape)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, saved_input):
    """Masks by saved_input > 0 (subgradient 0 at exactly 0)."""
    return grad_out * (saved_input > 0)


def sigmoid(x):
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out, saved_output):
    return grad_out * saved_output * (1.0 - saved_output)


# ---------------------------------------------------------------------------
# Pooling / reshaping
# ---------------------------------------------------------------------------

def global_avg_pool(x):
    """Mean over the spatial extent; output shape (N, C, 1, 1)."""
    x = as_nchw(x, "global_avg_pool input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise InvalidArgumentError("global_avg_pool: zero spatial extent")
    return x.mean(axis=(2, 3), keepdims=True, dtype=x.dtype)


def global_avg_pool_backward(grad_out, input_shape):
    n, c, h, w = input_shape
    g = grad_out / np.asarray(h * w, dtype=grad_out.dtype)
    return np.broadcast_to(g, input_shape).copy()


def concat_channels(inputs):
    """Concatenate along the channel axis; batch and spatial dims must agree."""
    if not inputs:
        raise InvalidArgumentError("concat_channels: need at least one input")
    first = inputs[0]
    for t in inputs[1:]:
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise InvalidArgumentError(
                f"concat_channels: batch/spatial mismatch {first.shape} vs {t.shape}"
            )
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(grad_out, channel_counts):
    """Split grad_out back into per-input gradients by channel ranges."""
    splits = np.cumsum(channel_counts)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad_out, splits, axis=1)]


def pixel_shuffle(x, scale):
    """Rearrange (N, C*s^2, H, W) -> (N, C, H*s, W*s).

    out[n, c, h*s+dy, w*s+dx] = in[n, c*s^2 + dy*s + dx, h, w]
    """
    if scale < 1:
        raise InvalidArgumentError(f"pixel_shuffle: scale must be positive, got {scale}")
    n, c, h, w = x.shape
    if c % (scale * scale) != 0:
        raise InvalidArgumentError(
            f"pixel_shuffle: {c} channels not divisible by scale^2={scale * scale}"
        )
    co = c // (scale * scale)
    y = x.reshape(n, co, scale, scale, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, co, h * scale, w * scale))


def pixel_shuffle_backward(grad_out, scale):
    n, co, hs, ws = grad_out.shape
    h, w = hs // scale, ws // scale
    g = grad_out.reshape(n, co, h, scale, w, scale).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(g.reshape(n, co * scale * scale, h, w))


# ---------------------------------------------------------------------------
# Bicubic resampling (not differentiable; data pipeline + baseline)
# ---------------------------------------------------------------------------

def _cubic_kernel(t):
    # Keys kernel with a = -0.5 (Catmull-Rom); partition of unity.
    a = -0.5
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    tn = t[near]
    out[near] = (a + 2.0) * tn**3 - (a + 3.0) * tn**2 + 1.0
    tf = t[far]
    out[far] = a * tf**3 - 5.0 * a * tf**2 + 8.0 * a * tf - 4.0 * a
    return out


def _resize_matrix(n_in, n_out):
    """(n_out, n_in) float64 matrix of clamped Catmull-Rom taps."""
    scale = n_out / n_in
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = base + tap
        wgt = _cubic_kernel(src - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), wgt)
    return mat


def bicubic_resize_to(x, out_h, out_w):
    """Resize spatial dims to (out_h, out_w) with edge-clamped Catmull-Rom taps."""
    x = as_nchw(x, "bicubic input")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"bicubic: output extent must be positive, got {(out_h, out_w)}")
    n, c, h, w = x.shape
    mh = _resize_matrix(h, out_h)
    mw = _resize_matrix(w, out_w)
    y = np.tensordot(x.astype(np.float64), mh, axes=([2], [1]))  # (n,c,w,out_h)
    y = np.tensordot(y, mw, axes=([2], [1]))                     # (n,c,out_h,out_w)
    return np.ascontiguousarray(y).astype(x.dtype)


def bicubic_resize(x, scale):
    """Scale spatial dims by a positive factor (output extents rounded)."""
    if not np.isfinite(scale) or scale <= 0:
        raise InvalidArgumentError(f"bicubic: scale must be positive, got {scale}")
    x = as_nchw(x, "bicubic input")
    out_h = max(1, int(round(x.shape[2] * scale)))
    out_w = max(1, int(round(x.shape[3] * scale)))
    return bicubic_resize_to(x, out_h, out_w)
