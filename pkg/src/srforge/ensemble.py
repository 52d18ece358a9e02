"""Three-level test-time ensembling.

Per patch: average over the eight dihedral transforms (self-ensemble).
Per image: overlapping tiles restored independently and blended with
center-peaked per-pixel weights (patch-ensemble).  Per output: plain
average over heterogeneous models (model-ensemble), clamped once at the
end.  Accumulation canvases are float64 so tile order cannot matter.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dihedral
from .errors import InvalidArgumentError
from .tensor import as_nchw

DEFAULT_PATCH = 120
DEFAULT_STRIDE = 60


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------

def _axis_origins(extent, patch, stride):
    origins = list(range(0, extent - patch + 1, stride))
    if origins[-1] + patch < extent:
        origins.append(extent - patch)
    return tuple(origins)


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    patch: int
    stride: int
    origins_y: tuple
    origins_x: tuple

    def tiles(self):
        for y in self.origins_y:
            for x in self.origins_x:
                yield y, x

    @property
    def tile_count(self):
        return len(self.origins_y) * len(self.origins_x)


def plan_tiles(height, width, patch, stride):
    """Overlapping tile origins: 0, stride, ... plus an edge-clamped tail."""
    if patch > min(height, width):
        raise InvalidArgumentError(
            f"patch {patch} exceeds image {height}x{width}; process whole image instead"
        )
    if not 1 <= stride <= patch:
        raise InvalidArgumentError(f"stride must be in [1, patch], got {stride}")
    return TilePlan(height, width, patch, stride,
                    _axis_origins(height, patch, stride),
                    _axis_origins(width, patch, stride))


# ---------------------------------------------------------------------------
# Blend weights
# ---------------------------------------------------------------------------

def make_weight_map(patch, scale):
    """Separable triangular blend window at HR resolution.

    Per axis, weight falls off linearly with distance from the (half-pixel)
    center and is floored at 1e-3 so every pixel keeps a positive say.
    """
    size = patch * scale
    half = size // 2
    center = (size - 1) / 2.0
    axis = (half + 1 - np.abs(np.arange(size) - center)) / (half + 1)
    axis = np.maximum(axis, 1e-3)
    return np.outer(axis, axis)


# ---------------------------------------------------------------------------
# Self-ensemble
# ---------------------------------------------------------------------------

def self_ensemble_forward(forward_fn, lr_patch):
    """Average forward_fn over all 8 dihedral transforms, inverses applied.

    The transforms commute with uniform upscaling, so acting on the LR input
    and inverting on the HR output lines all branches up.
    """
    total = None
    for t in range(dihedral.COUNT):
        out = dihedral.apply_inverse(t, forward_fn(dihedral.apply(t, lr_patch)))
        total = out.astype(np.float64) if total is None else total + out
    return (total / dihedral.COUNT).astype(lr_patch.dtype)


# ---------------------------------------------------------------------------
# Patch-ensemble
# ---------------------------------------------------------------------------

def tiled_forward(forward_fn, lr_image, plan, weight_map, threads=1):
    """Restore overlapping tiles and blend them by per-pixel weight.

    ``forward_fn`` maps a (1,3,p,p) patch to (1,3,p*s,p*s); the scale s is
    inferred from the weight map.  Weighted patches accumulate into a
    numerator canvas, the weights into a denominator canvas, and the output
    is their ratio (positive everywhere because the plan covers the image
    and weights are strictly positive).
    """
    lr_image = as_nchw(lr_image, "tiled_forward input")
    patch = plan.patch
    if weight_map.shape[0] % patch or weight_map.shape[0] != weight_map.shape[1]:
        raise InvalidArgumentError(
            f"weight map {weight_map.shape} is not a square multiple of patch {patch}"
        )
    scale = weight_map.shape[0] // patch
    h, w = plan.height, plan.width
    if (h, w) != (lr_image.shape[2], lr_image.shape[3]):
        raise InvalidArgumentError(
            f"plan is for {h}x{w} but image is {lr_image.shape[2]}x{lr_image.shape[3]}"
        )
    numer = np.zeros((lr_image.shape[0], lr_image.shape[1], h * scale, w * scale), dtype=np.float64)
    denom = np.zeros((h * scale, w * scale), dtype=np.float64)

    tiles = list(plan.tiles())

    def restore(origin):
        y, x = origin
        return forward_fn(lr_image[:, :, y : y + patch, x : x + patch])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(restore, tiles))
    else:
        outputs = [restore(t) for t in tiles]

    # Accumulate serially in plan order so thread count cannot change bytes.
    for (y, x), out in zip(tiles, outputs):
        ys, xs = y * scale, x * scale
        span = patch * scale
        numer[:, :, ys : ys + span, xs : xs + span] += out * weight_map
        denom[ys : ys + span, xs : xs + span] += weight_map

    assert (denom > 0).all(), "tile plan left pixels uncovered"
    return (numer / denom).astype(lr_image.dtype)


# ---------------------------------------------------------------------------
# Model-ensemble
# ---------------------------------------------------------------------------

@dataclass
class EnsembleSpec:
    """Heterogeneous model suite plus patch/self-ensemble settings."""

    models: list
    self_ensemble: bool = True
    patch: int = DEFAULT_PATCH
    stride: int = DEFAULT_STRIDE
    threads: int = 1
    weights: list = field(default_factory=list)  # defaults to uniform 1/k

    def __post_init__(self):
        if not self.models:
            raise InvalidArgumentError("ensemble needs at least one model")
        scales = {m.scale for m in self.models}
        if len(scales) != 1:
            raise InvalidArgumentError(f"ensemble members disagree on scale: {sorted(scales)}")
        if self.weights and len(self.weights) != len(self.models):
            raise InvalidArgumentError("per-model weights must match the model count")

    @property
    def scale(self):
        return self.models[0].scale


def restore_image(model, lr_image, patch=DEFAULT_PATCH, stride=DEFAULT_STRIDE,
                  self_ensemble=False, threads=1):
    """Single-model restoration through the patch pipeline (raw, unclamped).

    A patch of 0 (or one larger than the image) processes the whole image in
    one piece.
    """
    lr_image = as_nchw(lr_image, "restore input")
    fn = model.forward
    if self_ensemble:
        base = fn
        fn = lambda p: self_ensemble_forward(base, p)
    h, w = lr_image.shape[2], lr_image.shape[3]
    if patch <= 0 or patch > min(h, w):
        return fn(lr_image)
    plan = plan_tiles(h, w, patch, min(stride, patch))
    wmap = make_weight_map(patch, model.scale)
    return tiled_forward(fn, lr_image, plan, wmap, threads=threads)


def model_ensemble(spec, lr_image):
    """Average member restorations; clamp to [0,1] once, after averaging."""
    lr_image = as_nchw(lr_image, "ensemble input")
    k = len(spec.models)
    weights = spec.weights if spec.weights else [1.0 / k] * k
    total = None
    for model, wgt in zip(spec.models, weights):
        out = restore_image(model, lr_image, patch=spec.patch, stride=spec.stride,
                            self_ensemble=spec.self_ensemble, threads=spec.threads)
        contrib = wgt * out.astype(np.float64)
        total = contrib if total is None else total + contrib
    return np.clip(total, 0.0, 1.0).astype(lr_image.dtype)
