"""Kernel back-end selection.

The compiled Cython extension is preferred when present; a pure-numpy
implementation with identical semantics is the fallback. Set
``CYCLEFED_KERNELS=numpy`` or ``CYCLEFED_KERNELS=compiled`` to force one
(used by the benchmark and back-end parity tests).
"""

import os

from . import numpy_backend

try:
    from . import _fastkern
except ImportError:  # extension not built
    _fastkern = None


def get_backend(name):
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if _fastkern is None:
            raise RuntimeError("compiled kernel extension is not available")
        return _fastkern
    raise ValueError(f"unknown kernel backend {name!r}")


_forced = os.environ.get("CYCLEFED_KERNELS")
if _forced:
    _impl = get_backend(_forced)
else:
    _impl = _fastkern if _fastkern is not None else numpy_backend

BACKEND = "compiled" if _impl is _fastkern and _fastkern is not None else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
