"""Tensor conventions and the Parameter container.

A "tensor" throughout this package is a dense, C-contiguous numpy array of
shape (batch N, channels C, height H, width W).  Weights and activations are
float32; a float64 mode exists for finite-difference gradient checking and
is selected simply by feeding float64 arrays through the same code paths.
"""

import numpy as np

from .errors import InvalidArgumentError

FLOAT_DTYPES = (np.float32, np.float64)


def as_nchw(x, name="tensor", channels=None):
    """Validate and return ``x`` as a contiguous 4-D float array."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise InvalidArgumentError(f"{name} must be 4-D (N,C,H,W), got ndim={x.ndim}")
    if x.dtype not in FLOAT_DTYPES:
        x = x.astype(np.float32)
    if channels is not None and x.shape[1] != channels:
        raise InvalidArgumentError(
            f"{name} must have {channels} channels, got {x.shape[1]}"
        )
    return np.ascontiguousarray(x)


def require_same_shape(a, b, what="tensors"):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what} must share a shape: {a.shape} vs {b.shape}")


class Parameter:
    """A learnable tensor with an accumulating gradient of identical shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"
