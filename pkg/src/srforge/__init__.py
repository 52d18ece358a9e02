"""srforge: a desk-scale single-image super-resolution toolkit.

Dense residual networks with hand-written backpropagation, synthetic
degradation data with an alignment gate, Gaussian-process architecture
search, and three-level test-time ensembling (self / patch / model).
"""

from ._kernels import BACKEND as kernel_backend
from .data import DatasetManifest, DegradeSpec, degrade, gaussian_kernel, make_synthetic_dataset, ncc_filter
from .ensemble import EnsembleSpec, make_weight_map, model_ensemble, plan_tiles, restore_image, self_ensemble_forward, tiled_forward
from .metrics import MetricReport, l1_loss, mixed_loss, ms_ssim, ncc, psnr, ssim
from .models import DrnConfig, RcanConfig, build_drn, build_preset, build_rcan, load_weights, preset_config, save_weights
from .nas import GpSurrogate, SearchConfig, SearchSpace, acquire, gp_fit, gp_posterior, search
from .trainer import TrainConfig, TrainReport, adam_step, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "kernel_backend", "__version__",
    "DegradeSpec", "DatasetManifest", "gaussian_kernel", "degrade",
    "ncc_filter", "make_synthetic_dataset",
    "DrnConfig", "RcanConfig", "build_drn", "build_rcan", "build_preset",
    "preset_config", "save_weights", "load_weights",
    "l1_loss", "ssim", "ms_ssim", "mixed_loss", "psnr", "ncc", "MetricReport",
    "plan_tiles", "make_weight_map", "self_ensemble_forward", "tiled_forward",
    "model_ensemble", "restore_image", "EnsembleSpec",
    "SearchSpace", "SearchConfig", "GpSurrogate", "gp_fit", "gp_posterior",
    "acquire", "search",
    "TrainConfig", "TrainReport", "adam_step", "train", "evaluate",
]
