"""Command-line entry point.

Subcommands: make-data, train, search, infer, eval.  A JSON config file can
preload any flag of the chosen subcommand (--config); explicit flags win.
Exit codes: 0 success, 2 invalid arguments, 3 I/O failure, 4 training abort
on non-finite loss.
"""

import argparse
import json
import math
import os
import sys

from . import data as data_mod
from . import ensemble, nas, trainer
from .errors import SrforgeError, TrainingDivergedError
from .models import build_preset, load_weights
from .ppm import load_ppm, save_ppm

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

_SENTINEL = object()


def _fail(code, message):
    print(f"srforge: {message}", file=sys.stderr)
    raise SystemExit(code)


def _threads_default(value):
    if value is not None:
        return value
    env = os.environ.get("SRFORGE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _fail(EXIT_USAGE, f"SRFORGE_THREADS must be an integer, got {env!r}")
    return 1


def _apply_config_file(args, parser_defaults):
    """Overlay --config JSON under explicit flags; reject unknown keys."""
    if args.config is None:
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        _fail(EXIT_USAGE, f"config file is not valid JSON: {exc}")
    if not isinstance(loaded, dict):
        _fail(EXIT_USAGE, "config file must hold a JSON object")
    for key, value in loaded.items():
        dest = key.replace("-", "_")
        if dest not in parser_defaults:
            _fail(EXIT_USAGE, f"unknown config key {key!r}")
        if getattr(args, dest) is _SENTINEL:
            setattr(args, dest, value)
    return args


def _finalize(args, parser_defaults):
    for dest, default in parser_defaults.items():
        if getattr(args, dest, None) is _SENTINEL:
            setattr(args, dest, default)
    return args


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_make_data(args):
    if args.scale not in (2, 3, 4):
        _fail(EXIT_USAGE, f"--scale must be one of {{2,3,4}}, got {args.scale}")
    if args.count < 1:
        _fail(EXIT_USAGE, "--count must be positive")
    spec = data_mod.DegradeSpec(
        kernel=data_mod.gaussian_kernel(args.blur_sigma),
        scale=args.scale, noise_sigma=args.noise_sigma, rng_seed=args.seed,
    )
    try:
        manifest = data_mod.make_synthetic_dataset(
            args.out, args.count, args.hr_size, spec, args.seed,
            val_fraction=args.val_fraction, threads=_threads_default(args.threads),
        )
    except OSError as exc:
        _fail(EXIT_IO, f"dataset generation failed: {exc}")
    pairs = [data_mod.load_pair(r) for r in manifest.records]
    kept, rejected = data_mod.ncc_filter(pairs, threshold=args.ncc_threshold)
    audit = {
        "kept": len(kept),
        "rejected": [{"id": r.pair.id, "ncc": None if math.isnan(r.ncc_score) else r.ncc_score,
                      "reason": r.reason} for r in rejected],
        "threshold": args.ncc_threshold,
    }
    with open(os.path.join(args.out, "filter_audit.json"), "w", encoding="utf-8") as fh:
        json.dump(audit, fh, indent=2)
    print(f"wrote {len(manifest.records)} pairs to {args.out} "
          f"({len(manifest.split('train'))} train / {len(manifest.split('val'))} val); "
          f"alignment gate kept {len(kept)}, rejected {len(rejected)}")
    return EXIT_OK


def _load_manifest(path):
    if not os.path.exists(path):
        _fail(EXIT_IO, f"manifest not found: {path}")
    return data_mod.DatasetManifest.load(path)


def cmd_train(args):
    manifest = _load_manifest(args.manifest)
    scales = {r.scale for r in manifest.records}
    if len(scales) != 1:
        _fail(EXIT_USAGE, f"manifest mixes scales {sorted(scales)}")
    scale = scales.pop()
    try:
        config = trainer.TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
            lr_decay_factor=args.lr_decay_factor, lr_decay_interval=args.lr_decay_interval,
            beta2=args.beta2, crop=args.crop, loss_alpha=args.alpha, seed=args.seed,
            checkpoint_interval=args.checkpoint_interval,
        )
        model = build_preset(args.preset, scale, seed=args.seed)
    except SrforgeError as exc:
        _fail(EXIT_USAGE, str(exc))
    try:
        report = trainer.train(model, manifest, config, args.out,
                               resume_from=args.resume)
    except TrainingDivergedError as exc:
        print(f"srforge: training aborted: {exc}", file=sys.stderr)
        print(json.dumps(exc.snapshot, indent=2), file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        _fail(EXIT_IO, f"training I/O failure: {exc}")
    last = report.epochs[-1]
    print(f"trained {args.preset} for {last.epoch} epochs: "
          f"val PSNR {last.val_psnr:.3f} dB (best {report.best_psnr:.3f} "
          f"at epoch {report.best_epoch}); report in {args.out}/report.json")
    return EXIT_OK


def cmd_search(args):
    config = nas.SearchConfig(budget=args.budget, init_samples=args.init,
                              acquisition=args.acquisition, beta=args.beta,
                              seed=args.seed)
    if args.mode == "synthetic":
        space = nas.benchmark_space()
        evaluator, optimum = nas.quadratic_benchmark(space)
    else:
        if not args.manifest:
            _fail(EXIT_USAGE, "--manifest is required for --mode mini-train")
        manifest = _load_manifest(args.manifest)
        scale = manifest.records[0].scale
        space = nas.drn_space() if args.space == "drn" else nas.rcan_space()
        evaluator = nas.make_mini_train_evaluator(
            manifest, scale, epochs=args.epochs_per_eval, seed=args.seed, space=space,
        )
        optimum = None
    result = nas.search(space, evaluator, config)
    payload = result.to_dict()
    if optimum is not None:
        payload["known_optimum"] = list(optimum)
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)
        except OSError as exc:
            _fail(EXIT_IO, f"cannot write report: {exc}")
    best_point, best_score = result.best_observed
    print(f"evaluated {len(result.records)} points; best observed {best_point} "
          f"(score {best_score:.4f}); posterior argmax {result.posterior_best[0]}")
    return EXIT_OK


def _load_models(paths):
    loaded = []
    for path in paths:
        if not os.path.exists(path):
            _fail(EXIT_IO, f"weights file not found: {path}")
        try:
            loaded.append(load_weights(path))
        except SrforgeError as exc:
            _fail(EXIT_USAGE, f"cannot load {path}: {exc}")
    scales = {m.scale for m in loaded}
    if len(scales) != 1:
        _fail(EXIT_USAGE, f"ensemble members disagree on scale: {sorted(scales)}")
    return loaded


def cmd_infer(args):
    models = _load_models(args.weights)
    threads = _threads_default(args.threads)
    if not os.path.exists(args.input):
        _fail(EXIT_IO, f"input image not found: {args.input}")
    try:
        lr_image = load_ppm(args.input)
    except SrforgeError as exc:
        _fail(EXIT_USAGE, f"cannot read {args.input}: {exc}")
    spec = ensemble.EnsembleSpec(models, self_ensemble=args.self_ensemble,
                                 patch=args.patch, stride=args.stride,
                                 threads=threads)
    out = ensemble.model_ensemble(spec, lr_image)
    try:
        save_ppm(out, args.output)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot write {args.output}: {exc}")
    print(f"{args.input} ({lr_image.shape[3]}x{lr_image.shape[2]}) -> "
          f"{args.output} ({out.shape[3]}x{out.shape[2]}), "
          f"{len(models)} model(s), self-ensemble {'on' if args.self_ensemble else 'off'}")
    return EXIT_OK


def cmd_eval(args):
    manifest = _load_manifest(args.manifest)
    threads = _threads_default(args.threads)
    rows = []
    if args.bicubic or not args.weights:
        report = trainer.evaluate(None, manifest, split=args.split,
                                  patch=args.patch, stride=args.stride)
        rows.append(("bicubic", report))
    if args.weights:
        models = _load_models(args.weights)
        for path, model in zip(args.weights, models):
            report = trainer.evaluate(model, manifest, split=args.split,
                                      patch=args.patch, stride=args.stride,
                                      self_ensemble=args.self_ensemble, threads=threads)
            rows.append((os.path.basename(path), report))
        if len(models) > 1:
            report = trainer.evaluate(models, manifest, split=args.split,
                                      patch=args.patch, stride=args.stride,
                                      self_ensemble=args.self_ensemble, threads=threads)
            rows.append((f"{len(models)}-model-ensemble", report))
    width = max(len(name) for name, _ in rows)
    print(f"{'method'.ljust(width)}  {'PSNR':>8}  {'SSIM':>7}  n  fail")
    for name, report in rows:
        print(f"{name.ljust(width)}  {report.psnr_mean:8.4f}  {report.ssim_mean:7.4f}  "
              f"{report.evaluated}  {report.failed}")
    if args.json:
        payload = {name: report.to_dict() for name, report in rows}
        try:
            with open(args.json, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)
        except OSError as exc:
            _fail(EXIT_IO, f"cannot write {args.json}: {exc}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", default=None,
                     help="JSON file preloading this subcommand's flags")
    sub.add_argument("--seed", type=int, default=_SENTINEL, help="master RNG seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="srforge",
        description="Super-resolution toolkit: synthetic data, training, "
                    "architecture search, ensembled inference, evaluation.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("make-data", help="synthesize an LR/HR pair dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=_SENTINEL, help="number of pairs")
    p.add_argument("--scale", type=int, default=_SENTINEL, help="upscale factor (2/3/4)")
    p.add_argument("--hr-size", type=int, default=_SENTINEL, help="HR image side length")
    p.add_argument("--blur-sigma", type=float, default=_SENTINEL, help="degradation blur sigma")
    p.add_argument("--noise-sigma", type=float, default=_SENTINEL, help="additive noise sigma")
    p.add_argument("--val-fraction", type=float, default=_SENTINEL, help="validation holdout fraction")
    p.add_argument("--ncc-threshold", type=float, default=_SENTINEL, help="alignment gate")
    p.add_argument("--threads", type=int, default=_SENTINEL, help="pair-generation workers")
    p.set_defaults(func=cmd_make_data, defaults={
        "seed": 0, "count": 20, "scale": 2, "hr_size": 96, "blur_sigma": 0.8,
        "noise_sigma": 0.005, "val_fraction": 600 / 19000, "ncc_threshold": 0.99,
        "threads": None,
    })

    p = subs.add_parser("train", help="train a preset model on a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--out", required=True, help="checkpoint/report directory")
    p.add_argument("--preset", default=_SENTINEL,
                   help="drn-star | drn-tiny | rcan-star | rcan | rcan-tiny")
    p.add_argument("--epochs", type=int, default=_SENTINEL, help="training epochs")
    p.add_argument("--batch-size", type=int, default=_SENTINEL, help="crops per optimizer step")
    p.add_argument("--lr", type=float, default=_SENTINEL, help="Adam learning rate")
    p.add_argument("--lr-decay-factor", type=float, default=_SENTINEL,
                   help="multiplier applied every decay interval")
    p.add_argument("--lr-decay-interval", type=int, default=_SENTINEL,
                   help="epochs between learning-rate decays")
    p.add_argument("--beta2", type=float, default=_SENTINEL, help="Adam second-moment decay")
    p.add_argument("--crop", type=int, default=_SENTINEL, help="LR crop size")
    p.add_argument("--alpha", type=float, default=_SENTINEL, help="MS-SSIM weight in the loss")
    p.add_argument("--checkpoint-interval", type=int, default=_SENTINEL,
                   help="epochs between resume checkpoints")
    p.add_argument("--resume", default=_SENTINEL, help="checkpoint dir or prefix to resume")
    p.set_defaults(func=cmd_train, defaults={
        "seed": 0, "preset": "drn-tiny", "epochs": 30, "batch_size": 8, "lr": 1e-4,
        "lr_decay_factor": 0.5, "lr_decay_interval": 30, "beta2": 0.999, "crop": 120,
        "alpha": 0.84, "checkpoint_interval": 10, "resume": None,
    })

    p = subs.add_parser("search", help="GP-guided architecture search")
    _add_common(p)
    p.add_argument("--mode", choices=("synthetic", "mini-train"), default=_SENTINEL,
                   help="closed-form benchmark or short-training evaluator")
    p.add_argument("--budget", type=int, default=_SENTINEL, help="total evaluations")
    p.add_argument("--init", type=int, default=_SENTINEL, help="low-discrepancy start samples")
    p.add_argument("--acquisition", choices=("max-variance", "ucb"), default=_SENTINEL,
                   help="sampling rule after the start phase")
    p.add_argument("--beta", type=float, default=_SENTINEL, help="UCB exploration weight")
    p.add_argument("--manifest", default=_SENTINEL, help="dataset for mini-train mode")
    p.add_argument("--space", choices=("drn", "rcan"), default=_SENTINEL,
                   help="architecture grid for mini-train mode")
    p.add_argument("--epochs-per-eval", type=int, default=_SENTINEL,
                   help="training epochs per sampled architecture")
    p.add_argument("--out", default=_SENTINEL, help="JSON report path")
    p.set_defaults(func=cmd_search, defaults={
        "seed": 0, "mode": "synthetic", "budget": 20, "init": 5,
        "acquisition": "ucb", "beta": 2.0, "manifest": None, "space": "drn",
        "epochs_per_eval": 2, "out": None,
    })

    p = subs.add_parser("infer", help="restore image(s) with a model ensemble")
    _add_common(p)
    p.add_argument("--weights", nargs="+", required=True, help="one or more .srfw files")
    p.add_argument("--input", required=True, help="LR image (PPM)")
    p.add_argument("--output", required=True, help="SR output path (PPM)")
    p.add_argument("--patch", type=int, default=_SENTINEL,
                   help="LR tile size; 0 processes the whole image")
    p.add_argument("--stride", type=int, default=_SENTINEL, help="LR tile stride")
    se = p.add_mutually_exclusive_group()
    se.add_argument("--self-ensemble", dest="self_ensemble", action="store_true",
                    default=_SENTINEL, help="average the 8 flip/rotation branches")
    se.add_argument("--no-self-ensemble", dest="self_ensemble", action="store_false",
                    help="single plain forward per tile")
    p.add_argument("--threads", type=int, default=_SENTINEL, help="tile workers")
    p.set_defaults(func=cmd_infer, defaults={
        "seed": 0, "patch": ensemble.DEFAULT_PATCH, "stride": ensemble.DEFAULT_STRIDE,
        "self_ensemble": True, "threads": None,
    })

    p = subs.add_parser("eval", help="PSNR/SSIM metric table over a manifest split")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="dataset manifest (JSONL)")
    p.add_argument("--split", choices=("train", "val"), default=_SENTINEL,
                   help="which manifest split to score")
    p.add_argument("--weights", nargs="*", default=_SENTINEL,
                   help="model files; two or more adds an ensemble row")
    p.add_argument("--bicubic", action="store_true", default=_SENTINEL,
                   help="include the bicubic baseline row")
    p.add_argument("--patch", type=int, default=_SENTINEL, help="LR tile size")
    p.add_argument("--stride", type=int, default=_SENTINEL, help="LR tile stride")
    p.add_argument("--self-ensemble", dest="self_ensemble", action="store_true",
                   default=_SENTINEL, help="average the 8 flip/rotation branches")
    p.add_argument("--threads", type=int, default=_SENTINEL, help="tile workers")
    p.add_argument("--json", default=_SENTINEL, help="also write the table as JSON")
    p.set_defaults(func=cmd_eval, defaults={
        "seed": 0, "split": "val", "weights": [], "bicubic": False,
        "patch": ensemble.DEFAULT_PATCH, "stride": ensemble.DEFAULT_STRIDE,
        "self_ensemble": False, "threads": None, "json": None,
    })
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config_file(args, args.defaults)
    args = _finalize(args, args.defaults)
    try:
        return args.func(args)
    except SrforgeError as exc:
        _fail(EXIT_USAGE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
