"""Bicubic resampling: partition of unity, identity, and a scalar oracle."""

import numpy as np
import pytest

from srforge import ops
from srforge.errors import InvalidArgumentError


def _keys_kernel(t, a=-0.5):
    t = abs(t)
    if t <= 1.0:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2.0:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def _scalar_resize_1d(row, n_out):
    """Independent per-pixel kernel sum with edge clamping."""
    n_in = len(row)
    scale = n_out / n_in
    out = np.zeros(n_out)
    for i in range(n_out):
        src = (i + 0.5) / scale - 0.5
        base = int(np.floor(src))
        acc = 0.0
        for tap in range(base - 1, base + 3):
            wgt = _keys_kernel(src - tap)
            acc += wgt * row[min(max(tap, 0), n_in - 1)]
        out[i] = acc
    return out


def test_constant_preserved():
    x = np.full((1, 3, 9, 9), 0.43)
    for scale in (0.5, 2.0, 1.7):
        y = ops.bicubic_resize(x, scale)
        assert np.abs(y - 0.43).max() < 1e-6


def test_scale_one_identity():
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 7, 8))
    assert np.abs(ops.bicubic_resize(x, 1.0) - x).max() < 1e-6


def test_ramp_downscale_matches_scalar_oracle():
    ramp = np.linspace(0.0, 1.0, 16)
    x = np.tile(ramp, (1, 1, 4, 1))  # constant along H, ramp along W
    y = ops.bicubic_resize(x, 0.5)
    expected = _scalar_resize_1d(ramp, 8)
    assert np.abs(y[0, 0, 1] - expected).max() < 1e-5


def test_2d_matches_separable_scalar_oracle():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (6, 10))
    x = img[None, None]
    y = ops.bicubic_resize_to(x, 9, 5)[0, 0]
    rows = np.stack([_scalar_resize_1d(np.asarray(col), 9) for col in img.T], axis=1)
    expected = np.stack([_scalar_resize_1d(r, 5) for r in rows], axis=0)
    assert np.abs(y - expected).max() < 1e-5


def test_nonpositive_scale_rejected():
    x = np.zeros((1, 3, 4, 4))
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(InvalidArgumentError):
            ops.bicubic_resize(x, bad)


def test_deterministic():
    x = np.random.default_rng(2).uniform(0, 1, (1, 3, 12, 12)).astype(np.float32)
    assert ops.bicubic_resize(x, 2).tobytes() == ops.bicubic_resize(x, 2).tobytes()
