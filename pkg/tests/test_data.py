"""Data pipeline: degradation oracle, alignment gate, crops, dihedral group,
synthetic dataset determinism."""

import os

import numpy as np
import pytest

from srforge import data, dihedral, ops
from srforge.errors import InvalidArgumentError
from srforge.metrics import ncc


def smooth_image(size, seed, channels=3):
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.stack([
        0.3 + 0.4 * np.sin(2 * np.pi * (yy * rng.uniform(0.5, 1.5) + rng.uniform(0, 1)))
        * np.cos(2 * np.pi * xx * rng.uniform(0.5, 1.5)) * 0.5 + 0.2 * xx
        for _ in range(channels)
    ])
    return np.clip(img[None], 0.05, 0.95).astype(np.float32)


class TestDegrade:
    def test_constant_stays_constant(self):
        spec = data.DegradeSpec(data.gaussian_kernel(1.0), 2, 0.0, 0)
        lr = data.degrade(np.full((1, 3, 16, 16), 0.6, np.float32), spec)
        assert np.abs(lr - 0.6).max() < 1e-6

    def test_delta_kernel_reduces_to_bicubic(self):
        hr = smooth_image(16, 0)
        spec = data.DegradeSpec(data.delta_kernel(), 2, 0.0, 0)
        lr = data.degrade(hr, spec)
        expected = np.clip(ops.bicubic_resize_to(hr, 8, 8), 0, 1)
        assert np.abs(lr - expected).max() < 1e-6

    def test_box_kernel_matches_convolve_then_sample_oracle(self):
        # Naive reflect-padded convolution oracle, then the same bicubic step.
        ramp = np.tile(np.linspace(0.1, 0.9, 12), (12, 1)).astype(np.float32)
        hr = np.stack([ramp, ramp.T, ramp])[None]
        box = np.full((3, 3), 1.0 / 9.0)
        spec = data.DegradeSpec(box, 2, 0.0, 0)
        lr = data.degrade(hr, spec)

        padded = np.pad(hr, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
        blurred = np.zeros_like(hr, dtype=np.float64)
        for dy in range(3):
            for dx in range(3):
                blurred += box[dy, dx] * padded[:, :, dy : dy + 12, dx : dx + 12]
        expected = np.clip(ops.bicubic_resize_to(blurred.astype(np.float32), 6, 6), 0, 1)
        assert np.abs(lr - expected).max() < 1e-6

    def test_indivisible_dims_rejected(self):
        spec = data.DegradeSpec(data.gaussian_kernel(0.8), 2, 0.0, 0)
        with pytest.raises(InvalidArgumentError):
            data.degrade(np.zeros((1, 3, 15, 16), np.float32), spec)

    def test_noise_deterministic_from_seed(self):
        hr = smooth_image(16, 1)
        spec = data.DegradeSpec(data.gaussian_kernel(0.8), 2, 0.01, rng_seed=42)
        assert np.array_equal(data.degrade(hr, spec), data.degrade(hr, spec))

    def test_kernel_validation(self):
        with pytest.raises(InvalidArgumentError):
            data.DegradeSpec(np.ones((3, 3)), 2, 0.0, 0)  # sums to 9
        with pytest.raises(InvalidArgumentError):
            data.DegradeSpec(data.gaussian_kernel(0.8), 5, 0.0, 0)


class TestNccFilter:
    def test_exact_downsample_pair_kept(self):
        hr = smooth_image(32, 2)
        spec = data.DegradeSpec(data.gaussian_kernel(0.6), 2, 0.0, 0)
        pair = data.ImagePair("ok", data.degrade(hr, spec), hr)
        kept, rejected = data.ncc_filter([pair])
        assert len(kept) == 1 and not rejected
        up = ops.bicubic_resize_to(pair.lr, 32, 32)
        assert kept[0].ncc_score == pytest.approx(ncc(up, hr), abs=1e-12)
        assert kept[0].ncc_score > 0.99

    def test_shifted_pair_rejected(self):
        rng = np.random.default_rng(3)
        yy, xx = np.meshgrid(np.arange(40), np.arange(40), indexing="ij")
        tex = ((yy // 2 + xx // 2) % 2) * 0.5 + 0.2 + 0.15 * rng.uniform(0, 1, (40, 40))
        hr = np.clip(np.stack([tex] * 3)[None], 0, 1).astype(np.float32)
        spec = data.DegradeSpec(data.gaussian_kernel(0.6), 2, 0.0, 0)
        lr = data.degrade(hr, spec)
        shifted_hr = np.roll(hr, 4, axis=3)
        pair = data.ImagePair("shift", lr, shifted_hr)
        kept, rejected = data.ncc_filter([pair])
        assert not kept and len(rejected) == 1
        assert rejected[0].ncc_score < 0.99
        assert "ncc" in rejected[0].reason

    def test_empty_input(self):
        assert data.ncc_filter([]) == ([], [])

    def test_degenerate_pair_rejected_with_reason(self):
        flat = np.full((1, 3, 8, 8), 0.5, np.float32)
        hr = np.full((1, 3, 16, 16), 0.5, np.float32)
        kept, rejected = data.ncc_filter([data.ImagePair("flat", flat, hr)])
        assert not kept and rejected[0].reason == "degenerate"


class TestCropAug:
    def _pair(self, lr_size=16, scale=2, seed=4):
        hr = smooth_image(lr_size * scale, seed)
        spec = data.DegradeSpec(data.gaussian_kernel(0.6), scale, 0.0, 0)
        return data.ImagePair("p", data.degrade(hr, spec), hr)

    def test_crop_shapes_track_scale(self):
        pair = self._pair()
        lr_c, hr_c = data.random_crop_aug(pair, 8, np.random.default_rng(0))
        assert lr_c.shape == (1, 3, 8, 8)
        assert hr_c.shape == (1, 3, 16, 16)

    def test_identity_transform_is_plain_crop(self):
        pair = self._pair()
        lr_c, hr_c = data.crop_at(pair, 0, 0, 8, transform=0)
        assert np.array_equal(lr_c, pair.lr[:, :, :8, :8])
        assert np.array_equal(hr_c, pair.hr[:, :, :16, :16])

    def test_transform_then_inverse_restores(self):
        pair = self._pair()
        for t in range(dihedral.COUNT):
            lr_c, hr_c = data.crop_at(pair, 2, 3, 8, transform=t)
            assert np.array_equal(dihedral.apply_inverse(t, lr_c),
                                  pair.lr[:, :, 2:10, 3:11])
            assert np.array_equal(dihedral.apply_inverse(t, hr_c),
                                  pair.hr[:, :, 4:20, 6:22])

    def test_oversized_crop_rejected(self):
        with pytest.raises(InvalidArgumentError):
            data.random_crop_aug(self._pair(), 99, np.random.default_rng(0))


class TestDihedralGroup:
    def test_transforms_are_bijections(self):
        x = np.arange(2 * 3 * 4 * 4, dtype=np.float64).reshape(2, 3, 4, 4)
        for t in range(dihedral.COUNT):
            y = dihedral.apply(t, x)
            assert np.array_equal(np.sort(y, axis=None), np.sort(x, axis=None))
            assert np.array_equal(dihedral.apply_inverse(t, y), x)

    def test_eight_distinct_elements(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        images = {dihedral.apply(t, x).tobytes() for t in range(dihedral.COUNT)}
        assert len(images) == 8

    def test_composition_closure_matches_group_of_order_8(self):
        # Composing any two transforms lands back in the set, and the
        # composition table is a Latin square (each row/column a permutation).
        x = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        by_bytes = {dihedral.apply(t, x).tobytes(): t for t in range(8)}
        table = np.zeros((8, 8), dtype=int)
        for a in range(8):
            for b in range(8):
                composed = dihedral.apply(a, dihedral.apply(b, x))
                assert composed.tobytes() in by_bytes
                table[a, b] = by_bytes[composed.tobytes()]
        for i in range(8):
            assert sorted(table[i, :]) == list(range(8))
            assert sorted(table[:, i]) == list(range(8))


class TestSyntheticDataset:
    def _spec(self, scale=2):
        return data.DegradeSpec(data.gaussian_kernel(0.8), scale, 0.005, 0)

    def test_manifest_files_and_shapes(self, tmp_path):
        manifest = data.make_synthetic_dataset(tmp_path / "ds", 10, 64, self._spec(), 3,
                                               val_fraction=0.2)
        assert len(manifest.records) == 10
        assert len(manifest.split("val")) == 2
        assert len(manifest.split("train")) == 8
        for r in manifest.records:
            pair = data.load_pair(r)
            assert pair.hr.shape == (1, 3, 64, 64)
            assert pair.lr.shape == (1, 3, 32, 32)

    def test_same_seed_is_byte_identical(self, tmp_path):
        m1 = data.make_synthetic_dataset(tmp_path / "a", 4, 64, self._spec(), 9)
        m2 = data.make_synthetic_dataset(tmp_path / "b", 4, 64, self._spec(), 9)
        for r1, r2 in zip(m1.records, m2.records):
            assert open(r1.lr_path, "rb").read() == open(r2.lr_path, "rb").read()
            assert open(r1.hr_path, "rb").read() == open(r2.hr_path, "rb").read()
            assert r1.ncc == r2.ncc

    def test_threaded_generation_matches_serial(self, tmp_path):
        m1 = data.make_synthetic_dataset(tmp_path / "s", 6, 64, self._spec(), 4, threads=1)
        m2 = data.make_synthetic_dataset(tmp_path / "t", 6, 64, self._spec(), 4, threads=4)
        for r1, r2 in zip(m1.records, m2.records):
            assert open(r1.lr_path, "rb").read() == open(r2.lr_path, "rb").read()

    def test_challenge_lr_geometry_x4(self, tmp_path):
        manifest = data.make_synthetic_dataset(tmp_path / "x4", 1, 194 * 4,
                                               self._spec(scale=4), 0)
        pair = data.load_pair(manifest.records[0])
        assert pair.lr.shape[2:] == (194, 194)

    def test_no_id_in_both_splits(self, tmp_path):
        manifest = data.make_synthetic_dataset(tmp_path / "sp", 12, 64, self._spec(), 5,
                                               val_fraction=0.25)
        train_ids = {r.id for r in manifest.split("train")}
        val_ids = {r.id for r in manifest.split("val")}
        assert not (train_ids & val_ids)
        assert len(train_ids) + len(val_ids) == 12

    def test_generated_pairs_clear_alignment_gate(self, tmp_path):
        spec = data.DegradeSpec(data.gaussian_kernel(0.8), 2, 0.0, 0)
        manifest = data.make_synthetic_dataset(tmp_path / "gate", 8, 96, spec, 11)
        pairs = [data.load_pair(r) for r in manifest.records]
        kept, rejected = data.ncc_filter(pairs)
        assert len(kept) == 8 and not rejected

    def test_manifest_round_trip(self, tmp_path):
        manifest = data.make_synthetic_dataset(tmp_path / "rt", 3, 64, self._spec(), 6)
        loaded = data.DatasetManifest.load(os.path.join(tmp_path, "rt", "manifest.jsonl"))
        assert [r.__dict__ for r in loaded.records] == [r.__dict__ for r in manifest.records]
