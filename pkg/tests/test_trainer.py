"""Trainer: Adam algebra, determinism, resume identity, descent, evaluation."""

import math

import numpy as np
import pytest

from srforge import data, models, trainer
from srforge.errors import InvalidArgumentError, TrainingDivergedError
from srforge.tensor import Parameter


def make_dataset(tmp_path, count=10, hr_size=64, seed=0, val_fraction=0.2,
                 noise=0.005):
    spec = data.DegradeSpec(data.gaussian_kernel(0.8), 2, noise, 0)
    return data.make_synthetic_dataset(tmp_path / f"ds{seed}", count, hr_size,
                                       spec, seed, val_fraction=val_fraction)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=4, lr=1e-3, crop=16, seed=1,
                checkpoint_interval=1, beta2=0.97)
    base.update(kw)
    return trainer.TrainConfig(**base)


class TestAdam:
    def _param(self, value):
        return Parameter("p", np.array(value, dtype=np.float32).reshape(1, 1, 1, 1))

    def test_zero_gradient_keeps_parameters(self):
        p = self._param(0.7)
        state = trainer.AdamState([p])
        for _ in range(5):
            p.grad[:] = 0
            trainer.adam_step([p], state, lr=1e-2)
        assert p.value[0, 0, 0, 0] == np.float32(0.7)

    def test_constant_gradient_step_approaches_lr_sign(self):
        p = self._param(0.0)
        state = trainer.AdamState([p])
        lr = 1e-3
        prev = float(p.value.ravel()[0])
        for i in range(300):
            p.grad[:] = 2.5  # constant positive gradient
            trainer.adam_step([p], state, lr=lr)
        step = prev - float(p.value.ravel()[0])  # total of 300 steps
        assert step == pytest.approx(300 * lr, rel=0.02)

    def test_two_steps_match_hand_computed_moments(self):
        lr_, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = self._param(1.0)
        state = trainer.AdamState([p])
        g1, g2 = 0.5, -0.25

        # Step 1 by hand.
        m = (1 - b1) * g1
        v = (1 - b2) * g1 * g1
        theta = 1.0 - lr_ * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        p.grad[:] = g1
        trainer.adam_step([p], state, lr=lr_, beta1=b1, beta2=b2, eps=eps)
        assert float(p.value.ravel()[0]) == pytest.approx(theta, rel=1e-5)

        # Step 2 by hand.
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2 * g2
        theta = theta - lr_ * (m / (1 - b1**2)) / (math.sqrt(v / (1 - b2**2)) + eps)
        p.grad[:] = g2
        trainer.adam_step([p], state, lr=lr_, beta1=b1, beta2=b2, eps=eps)
        assert float(p.value.ravel()[0]) == pytest.approx(theta, rel=1e-5)


class TestTrainLoop:
    def test_lr_zero_keeps_parameters_bit_identical(self, tmp_path):
        manifest = make_dataset(tmp_path)
        model = models.build_preset("drn-tiny", 2, seed=0)
        before = [p.value.copy() for p in model.parameters]
        trainer.train(model, manifest, tiny_config(lr=0.0), tmp_path / "run")
        for p, b in zip(model.parameters, before):
            assert p.value.tobytes() == b.tobytes()

    def test_same_seed_identical_report(self, tmp_path):
        manifest = make_dataset(tmp_path)
        m1 = models.build_preset("drn-tiny", 2, seed=3)
        m2 = models.build_preset("drn-tiny", 2, seed=3)
        r1 = trainer.train(m1, manifest, tiny_config(epochs=3), tmp_path / "a")
        r2 = trainer.train(m2, manifest, tiny_config(epochs=3), tmp_path / "b")
        assert r1.trajectory() == r2.trajectory()
        for p, q in zip(m1.parameters, m2.parameters):
            assert p.value.tobytes() == q.value.tobytes()

    def test_loss_decreases_over_short_run(self, tmp_path):
        manifest = make_dataset(tmp_path, count=20, seed=5)
        model = models.build_preset("drn-tiny", 2, seed=1)
        report = trainer.train(model, manifest,
                               tiny_config(epochs=5, lr=2e-3, crop=24),
                               tmp_path / "run")
        assert report.epochs[-1].train_loss < report.epochs[0].train_loss

    def test_single_pair_line_search_decreases_loss(self, tmp_path):
        # At least one conventional step size must reduce the one-pair loss.
        manifest = make_dataset(tmp_path, count=3, val_fraction=0.34, seed=7)
        from srforge.metrics import mixed_loss, mixed_loss_grad
        pair = data.load_pair(manifest.split("train")[0])
        decreased = []
        for lr in (1e-2, 1e-3, 1e-4):
            model = models.build_preset("drn-tiny", 2, seed=2)
            out, cache = model.forward_train(pair.lr)
            before, grad = mixed_loss_grad(out, pair.hr)
            model.backward(grad, cache)
            state = trainer.AdamState(model.parameters)
            trainer.adam_step(model.parameters, state, lr=lr)
            after = mixed_loss(model.forward(pair.lr), pair.hr)
            decreased.append(after < before)
        assert any(decreased)

    def test_resume_reproduces_uninterrupted_trajectory(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=9)
        straight = models.build_preset("drn-tiny", 2, seed=4)
        full = trainer.train(straight, manifest, tiny_config(epochs=4),
                             tmp_path / "full")

        part = models.build_preset("drn-tiny", 2, seed=4)
        trainer.train(part, manifest, tiny_config(epochs=2), tmp_path / "part")
        resumed = trainer.train(part, manifest, tiny_config(epochs=4),
                                tmp_path / "part", resume_from=tmp_path / "part")
        assert resumed.trajectory()[-2:] == full.trajectory()[-2:]
        for p, q in zip(straight.parameters, part.parameters):
            assert p.value.tobytes() == q.value.tobytes()

    def test_checkpoint_resume_weights_match_disk(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=11)
        model = models.build_preset("drn-tiny", 2, seed=5)
        trainer.train(model, manifest, tiny_config(epochs=2), tmp_path / "run")
        reloaded = models.load_weights(tmp_path / "run" / "last.srfw")
        for p, q in zip(model.parameters, reloaded.parameters):
            assert p.value.tobytes() == q.value.tobytes()

    def test_non_finite_loss_aborts_with_snapshot(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=13)
        model = models.build_preset("drn-tiny", 2, seed=6)
        # An absurd learning rate reliably overflows float32 activations.
        config = tiny_config(epochs=6, lr=1e12, loss_alpha=0.0)
        with pytest.raises(TrainingDivergedError) as err:
            trainer.train(model, manifest, config, tmp_path / "run")
        snap = err.value.snapshot
        assert "epoch" in snap and "batch_ids" in snap and snap["batch_ids"]

    def test_augmentation_keeps_loss_for_equivariant_model(self):
        # A channelwise map commutes with the dihedral transforms, and the
        # transforms permute pixels, so the elementwise loss is unchanged.
        from srforge import dihedral
        from srforge.metrics import mixed_loss
        rng = np.random.default_rng(0)
        mix = rng.uniform(-0.5, 0.5, (3, 3))
        fwd = lambda x: np.einsum("oc,nchw->nohw", mix, x.astype(np.float64))
        lr_img = rng.uniform(0, 1, (1, 3, 24, 24))
        hr_img = rng.uniform(0, 1, (1, 3, 24, 24))
        base = mixed_loss(fwd(lr_img), hr_img)
        for t in range(dihedral.COUNT):
            value = mixed_loss(fwd(dihedral.apply(t, lr_img)), dihedral.apply(t, hr_img))
            assert value == pytest.approx(base, abs=1e-9)

    def test_best_checkpoint_tracks_max_val_psnr(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=15)
        model = models.build_preset("drn-tiny", 2, seed=7)
        report = trainer.train(model, manifest, tiny_config(epochs=3, lr=2e-3),
                               tmp_path / "run")
        best = max(report.epochs, key=lambda e: e.val_psnr)
        assert report.best_epoch == best.epoch
        assert report.best_psnr == best.val_psnr
        assert (tmp_path / "run" / "best.srfw").exists()


class TestEvaluate:
    def test_self_vs_self_sentinels(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=17)
        # Evaluate HR against itself by rewriting lr_path to the HR file and
        # scale to 1 via a passthrough model is overkill; instead check the
        # metric sentinels directly through the report path.
        from srforge.metrics import MetricReport, psnr, ssim
        pair = data.load_pair(manifest.records[0])
        assert psnr(pair.hr, pair.hr) == math.inf
        assert ssim(pair.hr, pair.hr) == pytest.approx(1.0, abs=1e-9)

    def test_bicubic_baseline_row(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=19)
        report = trainer.evaluate(None, manifest, split="val")
        assert report.evaluated == len(manifest.split("val"))
        assert report.failed == 0
        assert 10 < report.psnr_mean < 60
        assert 0 < report.ssim_mean <= 1

    def test_missing_file_becomes_error_entry(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=21)
        manifest.records[-1].lr_path = str(tmp_path / "nope.ppm")
        victim = manifest.records[-1]
        victim.split = "val"
        report = trainer.evaluate(None, manifest, split="val")
        assert report.failed == 1
        assert any("error" in e for e in report.per_image)
        assert report.evaluated == len(manifest.split("val")) - 1

    def test_model_evaluation_through_tiled_path(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=23)
        model = models.build_preset("drn-tiny", 2, seed=8)
        report = trainer.evaluate(model, manifest, split="val", patch=16, stride=8)
        assert report.evaluated > 0
        assert math.isfinite(report.psnr_mean)

    def test_empty_split_rejected(self, tmp_path):
        manifest = make_dataset(tmp_path, seed=25, val_fraction=0.0)
        with pytest.raises(InvalidArgumentError):
            trainer.evaluate(None, manifest, split="val")
