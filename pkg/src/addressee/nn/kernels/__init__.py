"""Hot conv/pool kernels with backend selection at import time.

The compiled Cython extension is preferred when it built successfully;
otherwise the numpy implementation is used. Set ADDRESSEE_KERNELS=numpy or
ADDRESSEE_KERNELS=compiled to force a backend (forcing the compiled one
raises if the extension is unavailable).
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _fastcore
except ImportError:
    _fastcore = None


def get_backend(name: str):
    """Return a kernel backend module by name ('numpy' or 'compiled')."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if _fastcore is None:
            raise ImportError("compiled kernel extension is not available")
        return _fastcore
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    return ["numpy"] + (["compiled"] if _fastcore is not None else [])


_forced = os.environ.get("ADDRESSEE_KERNELS", "").strip().lower()
if _forced:
    _impl = get_backend(_forced)
else:
    _impl = _fastcore if _fastcore is not None else numpy_backend

BACKEND_NAME = _impl.BACKEND_NAME
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
