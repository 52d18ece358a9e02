"""PPM I/O: value mapping, round trips, header conformance, error paths."""

import numpy as np
import pytest

from srforge.errors import PpmFormatError
from srforge.ppm import load_ppm, save_ppm


def test_single_pixel_values(tmp_path):
    path = tmp_path / "px.ppm"
    with open(path, "wb") as fh:
        fh.write(b"P6\n1 1\n255\n" + bytes([255, 0, 128]))
    img = load_ppm(path)
    assert img.shape == (1, 3, 1, 1)
    assert img[0, 0, 0, 0] == 1.0
    assert img[0, 1, 0, 0] == 0.0
    assert img[0, 2, 0, 0] == np.float32(128 / 255)


def test_round_trip_lossless_on_8bit_data(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, (1, 3, 7, 5)).astype(np.float32) / 255.0
    path = tmp_path / "rt.ppm"
    save_ppm(raw, path)
    again = load_ppm(path)
    assert np.array_equal(raw, again)
    save_ppm(again, tmp_path / "rt2.ppm")
    assert open(path, "rb").read() == open(tmp_path / "rt2.ppm", "rb").read()


def test_rounding_half_away_from_zero(tmp_path):
    # 127.5/255 must round up to 128, not bankers-round to even.
    img = np.full((1, 3, 1, 1), 127.5 / 255.0, dtype=np.float64)
    path = tmp_path / "round.ppm"
    save_ppm(img, path)
    payload = open(path, "rb").read()[-3:]
    assert list(payload) == [128, 128, 128]


def test_header_comments_parsed(tmp_path):
    path = tmp_path / "comment.ppm"
    with open(path, "wb") as fh:
        fh.write(b"P6\n# a comment line\n2 # trailing\n1\n# another\n255\n")
        fh.write(bytes(range(2 * 1 * 3)))
    img = load_ppm(path)
    assert img.shape == (1, 3, 1, 2)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(PpmFormatError) as err:
        load_ppm(path)
    assert err.value.code == "magic"


def test_unsupported_maxval(tmp_path):
    path = tmp_path / "max.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(PpmFormatError) as err:
        load_ppm(path)
    assert err.value.code == "maxval"


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(PpmFormatError) as err:
        load_ppm(path)
    assert err.value.code == "truncated"


def test_values_clipped_on_save(tmp_path):
    img = np.array([[-0.5, 0.5], [1.5, 0.0]], dtype=np.float32).reshape(1, 1, 2, 2)
    img = np.repeat(img, 3, axis=1)
    path = tmp_path / "clip.ppm"
    save_ppm(img, path)
    out = load_ppm(path)
    assert out.min() >= 0.0 and out.max() <= 1.0
