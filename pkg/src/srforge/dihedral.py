"""The eight flip/rotation/transpose transforms of the square (dihedral group).

Transforms act on the spatial axes of (N,C,H,W) arrays.  Index layout:
0..3 are rotations by k*90 degrees counterclockwise, 4..7 are the same
rotations followed by a horizontal flip.  Used both for training
augmentation and for test-time self-ensembling.
"""

import numpy as np

COUNT = 8


def apply(t, x):
    """Apply transform ``t`` (0..7) to the H/W axes; returns a contiguous copy."""
    if not 0 <= t < COUNT:
        raise ValueError(f"dihedral transform index must be 0..7, got {t}")
    k = t & 3
    y = np.rot90(x, k, axes=(2, 3)) if k else x
    if t >= 4:
        y = y[:, :, :, ::-1]
    return np.ascontiguousarray(y)


def inverse(t):
    """Index of the inverse transform (flip variants are self-inverse)."""
    if t < 4:
        return (4 - t) % 4
    return t


def apply_inverse(t, x):
    return apply(inverse(t), x)
