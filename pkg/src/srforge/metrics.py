"""Training losses and evaluation metrics on [0,1]-normalized images.

L1, single-scale SSIM, multi-scale SSIM (differentiable, used in the mixed
training loss), PSNR, and zero-mean normalized cross-correlation.  SSIM uses
the standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03, dynamic
range 1.0) with valid-region filtering, computed per channel then averaged.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .ops import bicubic_resize_to
from .tensor import as_nchw, require_same_shape

_WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2
_MS_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_MS_EPS = 1e-6  # floor for per-scale means before the weighted product


def _gaussian_window():
    half = (_WINDOW - 1) / 2.0
    t = np.arange(_WINDOW, dtype=np.float64) - half
    g = np.exp(-(t * t) / (2.0 * _SIGMA * _SIGMA))
    return g / g.sum()

_WIN = _gaussian_window()


# ---------------------------------------------------------------------------
# Separable valid-region filtering and its transpose
# ---------------------------------------------------------------------------

def _filt_axis(x, k, axis):
    v = np.lib.stride_tricks.sliding_window_view(x, k.size, axis=axis)
    return np.tensordot(v, k.astype(x.dtype), axes=([-1], [0]))


def _filt_axis_t(g, k, axis, in_len):
    shape = list(g.shape)
    shape[axis] = in_len
    out = np.zeros(shape, dtype=g.dtype)
    span = g.shape[axis]
    sl = [slice(None)] * g.ndim
    kk = k.astype(g.dtype)
    for t in range(k.size):
        sl[axis] = slice(t, t + span)
        out[tuple(sl)] += kk[t] * g
    return out


def _filter_valid(x):
    return _filt_axis(_filt_axis(x, _WIN, 2), _WIN, 3)


def _filter_valid_t(g, in_h, in_w):
    g = _filt_axis_t(g, _WIN, 3, in_w)
    return _filt_axis_t(g, _WIN, 2, in_h)


def _avg_pool2(x):
    h2 = x.shape[2] // 2 * 2
    w2 = x.shape[3] // 2 * 2
    x = x[:, :, :h2, :w2]
    return 0.25 * (x[:, :, 0::2, 0::2] + x[:, :, 0::2, 1::2]
                   + x[:, :, 1::2, 0::2] + x[:, :, 1::2, 1::2])


def _avg_pool2_t(g, in_shape):
    out = np.zeros(in_shape, dtype=g.dtype)
    h2 = g.shape[2] * 2
    w2 = g.shape[3] * 2
    q = np.asarray(0.25, dtype=g.dtype) * g
    out[:, :, 0:h2:2, 0:w2:2] += q
    out[:, :, 0:h2:2, 1:w2:2] += q
    out[:, :, 1:h2:2, 0:w2:2] += q
    out[:, :, 1:h2:2, 1:w2:2] += q
    return out


# ---------------------------------------------------------------------------
# L1
# ---------------------------------------------------------------------------

def l1_loss(pred, target):
    """Mean absolute error over all elements."""
    require_same_shape(pred, target, "l1_loss inputs")
    return float(np.abs(pred - target).mean(dtype=np.float64))


def l1_loss_grad(pred, target):
    """(value, gradient wrt pred); gradient is sign(pred-target)/count, 0 at ties."""
    require_same_shape(pred, target, "l1_loss inputs")
    diff = pred - target
    value = float(np.abs(diff).mean(dtype=np.float64))
    grad = np.sign(diff) / np.asarray(diff.size, dtype=diff.dtype)
    return value, grad.astype(pred.dtype, copy=False)


# ---------------------------------------------------------------------------
# SSIM / MS-SSIM
# ---------------------------------------------------------------------------

def _ssim_pieces(a, b):
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    t_aa = _filter_valid(a * a)
    t_ab = _filter_valid(a * b)
    t_bb = _filter_valid(b * b)
    sa = t_aa - mu_a * mu_a
    sb = t_bb - mu_b * mu_b
    sab = t_ab - mu_a * mu_b
    l_num = 2.0 * mu_a * mu_b + _C1
    l_den = mu_a * mu_a + mu_b * mu_b + _C1
    cs_num = 2.0 * sab + _C2
    cs_den = sa + sb + _C2
    l_map = l_num / l_den
    cs_map = cs_num / cs_den
    return {
        "a": a, "b": b, "mu_a": mu_a, "mu_b": mu_b,
        "l_den": l_den, "cs_den": cs_den, "l_map": l_map, "cs_map": cs_map,
    }


def _ssim_backward_a(p, g_cs, g_l):
    """Gradient wrt the first image from map-level gradients g_cs, g_l."""
    a, b = p["a"], p["b"]
    mu_a, mu_b = p["mu_a"], p["mu_b"]
    g_cs_num = g_cs / p["cs_den"]
    g_cs_den = -g_cs * p["cs_map"] / p["cs_den"]
    g_sab = 2.0 * g_cs_num
    g_sa = g_cs_den
    g_l_num = g_l / p["l_den"]
    g_l_den = -g_l * p["l_map"] / p["l_den"]
    g_mu_a = (2.0 * mu_b * g_l_num + 2.0 * mu_a * g_l_den
              - 2.0 * mu_a * g_sa - mu_b * g_sab)
    h, w = a.shape[2], a.shape[3]
    ga = 2.0 * a * _filter_valid_t(g_sa, h, w)       # through t_aa
    ga += b * _filter_valid_t(g_sab, h, w)           # through t_ab
    ga += _filter_valid_t(g_mu_a, h, w)              # through mu_a
    return ga


def _check_pair(a, b, what):
    a = as_nchw(a, what)
    b = as_nchw(b, what)
    require_same_shape(a, b, what)
    return a, b


def ssim(a, b):
    """Single-scale SSIM, per channel then averaged; valid-region window."""
    a, b = _check_pair(a, b, "ssim inputs")
    if min(a.shape[2], a.shape[3]) < _WINDOW:
        raise InvalidArgumentError(
            f"ssim: image {a.shape[2]}x{a.shape[3]} smaller than the {_WINDOW}x{_WINDOW} window"
        )
    p = _ssim_pieces(a.astype(np.float64), b.astype(np.float64))
    return float((p["l_map"] * p["cs_map"]).mean())


def _num_scales(min_hw, cap=5):
    n = 0
    size = min_hw
    while size >= _WINDOW and n < cap:
        n += 1
        size //= 2
    return n


def _ms_ssim_impl(a, b, want_grad):
    a, b = _check_pair(a, b, "ms_ssim inputs")
    scales = _num_scales(min(a.shape[2], a.shape[3]))
    if scales < 2:
        raise InvalidArgumentError(
            f"ms_ssim: image {a.shape[2]}x{a.shape[3]} too small for >= 2 scales"
        )
    weights = _MS_WEIGHTS[:scales]
    weights = weights / weights.sum()

    pieces = []
    cur_a, cur_b = a, b
    for j in range(scales):
        pieces.append(_ssim_pieces(cur_a, cur_b))
        if j < scales - 1:
            cur_a = _avg_pool2(cur_a)
            cur_b = _avg_pool2(cur_b)

    n, c = a.shape[0], a.shape[1]
    means = np.empty((scales, n, c), dtype=np.float64)
    for j, p in enumerate(pieces):
        m = p["cs_map"] if j < scales - 1 else p["l_map"] * p["cs_map"]
        means[j] = m.mean(axis=(2, 3), dtype=np.float64)
    clipped = np.maximum(means, _MS_EPS)
    per_image = np.prod(clipped ** weights[:, None, None], axis=0)  # (n, c)
    value = float(per_image.mean())
    if not want_grad:
        return value, None

    # d value / d means[j] then back through each scale's maps to the input.
    g_means = per_image[None] * weights[:, None, None] / clipped / (n * c)
    g_means = g_means * (means > _MS_EPS)
    grad = None
    for j in range(scales - 1, -1, -1):
        p = pieces[j]
        npix = p["cs_map"].shape[2] * p["cs_map"].shape[3]
        g_map = (g_means[j] / npix)[:, :, None, None].astype(a.dtype)
        g_map = np.broadcast_to(g_map, p["cs_map"].shape)
        if j == scales - 1:
            g_cs = g_map * p["l_map"]
            g_l = g_map * p["cs_map"]
        else:
            g_cs = g_map
            g_l = np.zeros_like(g_map)
        h_j = _ssim_backward_a(p, g_cs, g_l)
        grad = h_j if grad is None else h_j + _avg_pool2_t(grad, h_j.shape)
    return value, grad.astype(a.dtype, copy=False)


def ms_ssim(a, b):
    """Multi-scale SSIM (up to 5 scales, 2x average-pool between scales).

    Scale weights follow the standard series and are renormalized to sum to
    one when the image only supports fewer scales.
    """
    value, _ = _ms_ssim_impl(a, b, want_grad=False)
    return value


def ms_ssim_grad(a, b):
    """(value, gradient wrt the first image)."""
    return _ms_ssim_impl(a, b, want_grad=True)


# ---------------------------------------------------------------------------
# Mixed loss
# ---------------------------------------------------------------------------

def mixed_loss(pred, target, alpha=0.84):
    """alpha * (1 - ms_ssim) + (1 - alpha) * l1."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"mixed_loss: alpha must be in [0,1], got {alpha}")
    value = (1.0 - alpha) * l1_loss(pred, target)
    if alpha > 0.0:
        value += alpha * (1.0 - ms_ssim(pred, target))
    return value


def mixed_loss_grad(pred, target, alpha=0.84):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"mixed_loss: alpha must be in [0,1], got {alpha}")
    l1_value, l1_g = l1_loss_grad(pred, target)
    value = (1.0 - alpha) * l1_value
    grad = (1.0 - alpha) * l1_g
    if alpha > 0.0:
        ms_value, ms_g = ms_ssim_grad(pred, target)
        value += alpha * (1.0 - ms_value)
        grad -= alpha * ms_g
    return value, grad


# ---------------------------------------------------------------------------
# PSNR / NCC
# ---------------------------------------------------------------------------

def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    require_same_shape(a, b, "psnr inputs")
    d = a.astype(np.float64) - b.astype(np.float64)
    mse = float((d * d).mean())
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak) - 10.0 * math.log10(mse)


def ncc(a, b):
    """Zero-mean normalized cross-correlation over all pixels and channels.

    When spatial sizes differ the first image is bicubically resized to the
    second's size first (the usual LR-vs-HR alignment check).
    """
    a = as_nchw(a, "ncc input a")
    b = as_nchw(b, "ncc input b")
    if a.shape[1] != b.shape[1] or a.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"ncc: batch/channel mismatch {a.shape} vs {b.shape}")
    if a.shape[2:] != b.shape[2:]:
        a = bicubic_resize_to(a, b.shape[2], b.shape[3])
    da = a.astype(np.float64) - a.mean(dtype=np.float64)
    db = b.astype(np.float64) - b.mean(dtype=np.float64)
    va = float((da * da).sum())
    vb = float((db * db).sum())
    if va <= 1e-24 or vb <= 1e-24:
        raise DegenerateInputError("ncc: zero variance input")
    return float((da * db).sum() / math.sqrt(va * vb))


# ---------------------------------------------------------------------------
# Aggregate evaluation report
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-image PSNR/SSIM entries plus their arithmetic means."""

    per_image: list = field(default_factory=list)
    psnr_mean: float = math.nan
    ssim_mean: float = math.nan
    evaluated: int = 0
    failed: int = 0

    @classmethod
    def from_entries(cls, entries):
        ok = [e for e in entries if "error" not in e]
        report = cls(per_image=list(entries), evaluated=len(ok),
                     failed=len(entries) - len(ok))
        if ok:
            report.psnr_mean = float(np.mean([e["psnr"] for e in ok]))
            report.ssim_mean = float(np.mean([e["ssim"] for e in ok]))
        return report

    def to_dict(self):
        return {
            "psnr_mean": self.psnr_mean,
            "ssim_mean": self.ssim_mean,
            "evaluated": self.evaluated,
            "failed": self.failed,
            "per_image": self.per_image,
        }
