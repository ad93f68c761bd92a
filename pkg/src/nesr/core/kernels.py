"""Backend selection for the convolution patch kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Set ``NESR_PURE_PYTHON=1`` to force the fallback.
"""
import os

from nesr.core import _kernels_py

BACKEND = "python"
if os.environ.get("NESR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from nesr.core import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        BACKEND = "cython"
else:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py


def im2col(x, k):
    return _impl.im2col(x, k)


def col2im(cols, channels, spatial, k):
    return _impl.col2im(cols, channels, spatial, k)


def backends():
    """Map of available backend name -> module, ignoring ``NESR_PURE_PYTHON``."""
    out = {"python": _kernels_py}
    try:
        from nesr.core import _kernels
    except ImportError:
        return out
    out["cython"] = _kernels
    return out
