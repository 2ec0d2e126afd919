"""Conv kernel backend selection.

The compiled Cython core is used when it was built and THZCE_PURE_KERNELS is
not set; otherwise the pure-numpy implementation takes over.  Both expose the
same two functions and agree to float64 rounding (benchmarks/bench_conv.py
compares their throughput).
"""

import os

import numpy as np

from . import conv_numpy

_force_pure = os.environ.get("THZCE_PURE_KERNELS", "") == "1"

if not _force_pure:
    try:
        from . import _convcore as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if _compiled is not None:

    def conv2d_forward(x, kernel, bias):
        return _compiled.conv2d_forward(_as_f64(x), _as_f64(kernel), _as_f64(bias))

    def conv2d_backward(x, kernel, grad_out):
        return _compiled.conv2d_backward(_as_f64(x), _as_f64(kernel), _as_f64(grad_out))

else:
    conv2d_forward = conv_numpy.conv2d_forward
    conv2d_backward = conv_numpy.conv2d_backward
