"""Kernel lane selection.

Hot numeric kernels exist in two interchangeable implementations:
``numpy_lane`` (vectorized numpy, always available) and ``numba_lane``
(JIT-compiled loops). The active lane is chosen once at import time:
numba when importable, unless the environment variable
``WAVEPLANE_FORCE_NUMPY=1`` forces the numpy fallback.

Both lanes expose the same functions over C-contiguous float64 arrays:

- ``corr_down(xe, f, start, n_out)``: correlate along axis 0, keep every
  second output starting at ``start``.
- ``up_conv(ce, f, off, n)``: zero-upsample along axis 0, full convolution
  with ``f``, crop ``n`` rows starting at ``off``.
- ``up_conv_adj(g, f, off, me)``: exact adjoint of ``up_conv``.
- ``bilinear_gather(plane, fx, fy)`` / ``bilinear_scatter(grad, fx, fy, h, w)``:
  edge-clamped bilinear read and its adjoint scatter-add.
- ``composite_fwd`` / ``composite_bwd``: transmittance-weighted color
  accumulation along rays and its reverse pass.
"""
import os

from . import numpy_lane

try:
    from . import numba_lane
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_lane = None
    HAVE_NUMBA = False

_FORCED = os.environ.get("WAVEPLANE_FORCE_NUMPY", "") == "1"

if HAVE_NUMBA and not _FORCED:
    active = numba_lane
else:
    active = numpy_lane


def kernel_lane() -> str:
    """Name of the lane in use: 'numba' or 'numpy'."""
    return "numba" if active is numba_lane else "numpy"
