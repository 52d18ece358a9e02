"""Backend selection for the convolution hot kernels.

The compiled extension is preferred when it imports; otherwise the numpy
fallback is used.  ``SRFORGE_BACKEND=python|cython`` forces the choice
(forcing ``cython`` when the extension is missing raises at import).
Both backends implement the same three functions on zero-padded inputs:

    conv_forward(xp, w, stride)            -> (N, Co, Ho, Wo)
    conv_grad_input(gy, w, xp_shape, stride) -> grad wrt padded input
    conv_grad_weight(gy, xp, w_shape, stride) -> grad wrt weight
"""

import os

from . import numpy_backend

_FORCE = os.environ.get("SRFORGE_BACKEND", "").strip().lower()

_compiled = None
if _FORCE not in ("python", "numpy"):
    try:
        from . import conv_ext as _compiled
    except ImportError:
        _compiled = None
    if _FORCE == "cython" and _compiled is None:
        raise ImportError(
            "SRFORGE_BACKEND=cython but the compiled extension is not built; "
            "run 'python setup.py build_ext --inplace' or reinstall"
        )

active = _compiled if _compiled is not None else numpy_backend
BACKEND = active.NAME

conv_forward = active.conv_forward
conv_grad_input = active.conv_grad_input
conv_grad_weight = active.conv_grad_weight


def available_backends():
    """Name -> module for every importable backend (for tests/benchmarks)."""
    out = {"numpy": numpy_backend}
    if _compiled is not None:
        out["cython"] = _compiled
    else:
        try:
            from . import conv_ext
            out["cython"] = conv_ext
        except ImportError:
            pass
    return out
