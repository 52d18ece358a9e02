"""Binary PPM (P6, maxval 255) image I/O.

Values map to [0,1] by /255 on load; save rounds half away from zero, so a
load/save round trip on 8-bit data is lossless.
"""

import numpy as np

from .errors import PpmFormatError
from .tensor import as_nchw


_WS = (9, 10, 13, 32)


def _read_token(buf, pos):
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in _WS:
            pos += 1
        elif c == 0x23:  # '#': comment to end of line
            while pos < n and buf[pos] not in (10, 13):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WS:
        pos += 1
    if start == pos:
        raise PpmFormatError("unexpected end of header", code="truncated")
    return buf[start:pos], pos


def load_ppm(path):
    """Load a P6 PPM into a (1,3,H,W) float32 array in [0,1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 2 or buf[:2] != b"P6":
        raise PpmFormatError(f"{path}: not a P6 PPM", code="magic")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PpmFormatError(f"{path}: bad header token {tok!r}", code="header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PpmFormatError(f"{path}: maxval {maxval} unsupported (need 255)", code="maxval")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PpmFormatError(
            f"{path}: truncated payload ({len(payload)} of {need} bytes)", code="truncated"
        )
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    out = img.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0)
    return np.ascontiguousarray(out)


def save_ppm(x, path):
    """Save a (1,3,H,W) array in [0,1] as binary P6 (rounds half away from zero)."""
    x = as_nchw(x, "save_ppm input", channels=3)
    if x.shape[0] != 1:
        raise PpmFormatError(f"save_ppm wants a single image, got batch {x.shape[0]}", code="header")
    arr = np.clip(x[0], 0.0, 1.0).astype(np.float64)
    bytes_ = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    h, w = bytes_.shape[1], bytes_.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes_.transpose(1, 2, 0).tobytes())
