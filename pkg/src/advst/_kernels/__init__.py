"""Hot inner kernels: conv patch extraction, 2x2 max-pool, bilinear grid sampling.

The compiled extension ``_native`` is used when it imports; otherwise the numpy
reference implementation is used. Set ``ADVST_KERNELS=python`` to force the
fallback (benchmarks and cross-checks do this).
"""

import os

from . import _reference

BACKEND = "python"
_impl = _reference

if os.environ.get("ADVST_KERNELS", "auto") != "python":
    try:
        from . import _native
    except ImportError:
        if os.environ.get("ADVST_KERNELS") == "native":
            raise
    else:
        _impl = _native
        BACKEND = "native"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
grid_sample_forward = _impl.grid_sample_forward
grid_sample_backward = _impl.grid_sample_backward


def native_available():
    try:
        from . import _native  # noqa: F401
    except ImportError:
        return False
    return True
