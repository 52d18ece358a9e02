"""Binary tensor container used for model weights and optimizer state.

Layout (little-endian):
    magic "SRFW" | version u32 = 1 | kind u8 | config-JSON (u32 len + bytes)
    | tensor count u32 | per tensor: name (u32 len + UTF-8), ndim u8 = 4,
    four u32 dims, raw float32 data.

Round trips are bit-exact: writing what was read produces identical bytes.
"""

import struct

import numpy as np

from .errors import WeightsFormatError

MAGIC = b"SRFW"
VERSION = 1


def write_tensor_file(path, kind, config_json, named_tensors):
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<B", kind)]
    blob = config_json.encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(named_tensors)))
    for name, value in named_tensors:
        if value.ndim != 4:
            raise WeightsFormatError(f"tensor {name!r} must be 4-D to serialize", code="shape")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", 4))
        parts.append(struct.pack("<4I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, path):
        with open(path, "rb") as fh:
            self.buf = fh.read()
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise WeightsFormatError(
                f"{self.path}: truncated while reading {what}", code="truncated"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]


def read_tensor_file(path, expected_kinds=None):
    """Parse a container; returns (kind, config_json, [(name, array), ...])."""
    r = _Reader(path)
    if r.take(4, "magic") != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic (not a weights file)", code="magic")
    version = r.u32("version")
    if version != VERSION:
        raise WeightsFormatError(
            f"{path}: unsupported format version {version}", code="version"
        )
    kind = r.u8("kind")
    if expected_kinds is not None and kind not in expected_kinds:
        raise WeightsFormatError(f"{path}: unexpected content kind {kind}", code="kind")
    config_json = r.take(r.u32("config length"), "config").decode("utf-8")
    count = r.u32("tensor count")
    tensors = []
    for i in range(count):
        name = r.take(r.u32("name length"), f"tensor {i} name").decode("utf-8")
        ndim = r.u8("ndim")
        if ndim != 4:
            raise WeightsFormatError(
                f"{path}: tensor {name!r} has ndim {ndim}, expected 4", code="shape"
            )
        dims = struct.unpack("<4I", r.take(16, f"tensor {name!r} dims"))
        size = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * size, f"tensor {name!r} data")
        value = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        tensors.append((name, value))
    return kind, config_json, tensors
