"""Training loop: random aligned crops with dihedral augmentation, mixed
L1 + multi-scale-SSIM loss, Adam updates, per-epoch validation through the
tiled restoration path, and resumable checkpoints.

Every source of randomness in an epoch derives from (seed, epoch), so a
resumed run replays the exact trajectory of an uninterrupted one.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import data as data_mod
from . import ensemble
from .errors import InvalidArgumentError, TrainingDivergedError
from .metrics import MetricReport, l1_loss, mixed_loss_grad, psnr, ssim
from .models import load_weights, save_weights
from .ops import bicubic_resize_to
from .weights import read_tensor_file, write_tensor_file

_STATE_KIND = 2  # container kind byte for optimizer state files


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_interval: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop: int = 120
    loss_alpha: float = 0.84
    seed: int = 0
    checkpoint_interval: int = 10
    val_patch: int = ensemble.DEFAULT_PATCH
    val_stride: int = ensemble.DEFAULT_STRIDE

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1 or self.crop < 1:
            raise InvalidArgumentError(f"invalid training config: {self}")
        if not 0.0 <= self.loss_alpha <= 1.0:
            raise InvalidArgumentError(f"loss_alpha must be in [0,1], got {self.loss_alpha}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    def __init__(self, params):
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update from each parameter's ``grad``."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p in params:
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)


def _save_state(state, path):
    tensors = [(f"m.{name}", arr) for name, arr in state.m.items()]
    tensors += [(f"v.{name}", arr) for name, arr in state.v.items()]
    write_tensor_file(path, _STATE_KIND, json.dumps({"t": state.t}), tensors)


def _load_state(params, path):
    _, config_json, tensors = read_tensor_file(path, expected_kinds=(_STATE_KIND,))
    state = AdamState(params)
    state.t = int(json.loads(config_json)["t"])
    by_name = dict(tensors)
    for p in params:
        state.m[p.name] = by_name[f"m.{p.name}"]
        state.v[p.name] = by_name[f"v.{p.name}"]
    return state


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_psnr: float
    val_ssim: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_psnr: float = -math.inf
    best_checkpoint: str = ""
    wall_seconds: float = 0.0

    def to_dict(self):
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_psnr": self.best_psnr,
            "best_checkpoint": self.best_checkpoint,
            "wall_seconds": self.wall_seconds,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def trajectory(self):
        """The deterministic part (no wall times), for reproducibility checks."""
        return [(e.epoch, e.train_loss, e.val_psnr, e.val_ssim, e.lr) for e in self.epochs]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _load_split(manifest, split, root):
    return [data_mod.load_pair(r, root) for r in manifest.split(split)]


def validate(model_or_models, pairs, patch, stride, self_ensemble=False, threads=1):
    """Mean PSNR/SSIM of full-image restorations against the HR references."""
    models = model_or_models if isinstance(model_or_models, list) else [model_or_models]
    spec = ensemble.EnsembleSpec(models, self_ensemble=self_ensemble,
                                 patch=patch, stride=stride, threads=threads)
    entries = []
    for pair in pairs:
        out = ensemble.model_ensemble(spec, pair.lr)
        entries.append({"id": pair.id, "psnr": psnr(out, pair.hr), "ssim": ssim(out, pair.hr)})
    return MetricReport.from_entries(entries)


def train(model, manifest, config, out_dir, root=".", resume_from=None):
    """Optimize ``model`` on the manifest's train split; returns a TrainReport.

    One random crop per training pair per epoch, shuffled into batches.
    Checkpoints land in ``out_dir`` ("last" for resume, "best" at the top
    validation PSNR).  ``resume_from`` names a previous out_dir (or checkpoint
    prefix) to continue from.
    """
    os.makedirs(out_dir, exist_ok=True)
    train_pairs = _load_split(manifest, "train", root)
    val_pairs = _load_split(manifest, "val", root)
    if not train_pairs:
        raise InvalidArgumentError("manifest has no training pairs")
    train_pairs, rejected = data_mod.ncc_filter(train_pairs)
    if not train_pairs:
        raise InvalidArgumentError("all training pairs failed the alignment gate")
    smallest = min(min(p.lr.shape[2], p.lr.shape[3]) for p in train_pairs)
    crop = min(config.crop, smallest)

    state = AdamState(model.parameters)
    report = TrainReport()
    start_epoch = 1
    if resume_from:
        prefix = str(resume_from)
        if os.path.isdir(prefix):
            prefix = os.path.join(prefix, "last")
        loaded = load_weights(prefix + ".srfw")
        if loaded.config.to_dict() != model.config.to_dict():
            raise InvalidArgumentError(
                f"checkpoint architecture {loaded.config} does not match model {model.config}"
            )
        for p, q in zip(model.parameters, loaded.parameters):
            p.value = q.value.astype(p.value.dtype)
            p.zero_grad()
        state = _load_state(model.parameters, prefix + ".state")
        with open(prefix + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        start_epoch = int(meta["epoch"]) + 1
        report.best_epoch = int(meta["best_epoch"])
        report.best_psnr = float(meta["best_psnr"])
        report.best_checkpoint = meta["best_checkpoint"]

    t_start = time.perf_counter()
    for epoch in range(start_epoch, config.epochs + 1):
        t_epoch = time.perf_counter()
        rng = _epoch_rng(config.seed, epoch)
        order = rng.permutation(len(train_pairs))
        crops = [data_mod.random_crop_aug(train_pairs[i], crop, rng) for i in order]
        lr_now = config.lr * config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_interval)

        loss_sum = 0.0
        sample_count = 0
        for b0 in range(0, len(crops), config.batch_size):
            batch = crops[b0 : b0 + config.batch_size]
            xb = np.concatenate([c[0] for c in batch], axis=0)
            yb = np.concatenate([c[1] for c in batch], axis=0)
            model.zero_grads()
            out, cache = model.forward_train(xb)
            loss, grad = mixed_loss_grad(out, yb, config.loss_alpha)
            if not math.isfinite(loss):
                ids = [train_pairs[i].id for i in order[b0 : b0 + config.batch_size]]
                snapshot = {"epoch": epoch, "batch_ids": ids,
                            "l1": l1_loss(out, yb), "loss": loss}
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", snapshot=snapshot
                )
            model.backward(grad, cache)
            adam_step(model.parameters, state, lr_now,
                      config.beta1, config.beta2, config.eps)
            loss_sum += loss * len(batch)
            sample_count += len(batch)

        val = validate(model, val_pairs, config.val_patch, config.val_stride)
        stats = EpochStats(epoch, loss_sum / sample_count, val.psnr_mean,
                           val.ssim_mean, lr_now, time.perf_counter() - t_epoch)
        report.epochs.append(stats)

        if val.psnr_mean > report.best_psnr:
            report.best_psnr = val.psnr_mean
            report.best_epoch = epoch
            report.best_checkpoint = os.path.join(out_dir, "best.srfw")
            save_weights(model, report.best_checkpoint)
        if epoch % config.checkpoint_interval == 0 or epoch == config.epochs:
            _write_checkpoint(model, state, report, epoch, out_dir)

    report.wall_seconds = time.perf_counter() - t_start
    report.save(os.path.join(out_dir, "report.json"))
    return report


def _write_checkpoint(model, state, report, epoch, out_dir):
    prefix = os.path.join(out_dir, "last")
    save_weights(model, prefix + ".srfw")
    _save_state(state, prefix + ".state")
    with open(prefix + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({"epoch": epoch, "best_epoch": report.best_epoch,
                   "best_psnr": report.best_psnr,
                   "best_checkpoint": report.best_checkpoint}, fh)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def bicubic_baseline(lr_image, scale):
    up = bicubic_resize_to(lr_image, lr_image.shape[2] * scale, lr_image.shape[3] * scale)
    return np.clip(up, 0.0, 1.0)


def evaluate(models, manifest, split="val", root=".", patch=ensemble.DEFAULT_PATCH,
             stride=ensemble.DEFAULT_STRIDE, self_ensemble=False, threads=1):
    """Per-pair PSNR/SSIM over a manifest split via the full restoration path.

    ``models`` may be a single model, a list (model-ensemble), or None for
    the bicubic-upscale baseline.  Pairs that fail to load become error
    entries; aggregates cover the successes.
    """
    records = manifest.split(split)
    if not records:
        raise InvalidArgumentError(f"manifest has no '{split}' records")
    spec = None
    if models is not None:
        model_list = models if isinstance(models, list) else [models]
        spec = ensemble.EnsembleSpec(model_list, self_ensemble=self_ensemble,
                                     patch=patch, stride=stride, threads=threads)
    entries = []
    for record in records:
        try:
            pair = data_mod.load_pair(record, root)
            if spec is None:
                out = bicubic_baseline(pair.lr, record.scale)
            else:
                out = ensemble.model_ensemble(spec, pair.lr)
            entries.append({"id": record.id, "psnr": psnr(out, pair.hr),
                            "ssim": ssim(out, pair.hr)})
        except (OSError, ValueError) as exc:
            entries.append({"id": record.id, "error": str(exc)})
    return MetricReport.from_entries(entries)
