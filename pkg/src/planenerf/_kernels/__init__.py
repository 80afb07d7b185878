"""Interpolation kernels: compiled extension when built, numpy fallback
otherwise. Set PLANENERF_KERNELS=numpy to force the fallback; both
backends implement identical contracts and are cross-checked in tests.
"""

import os

from . import _fallback

_impl = _fallback
if os.environ.get("PLANENERF_KERNELS", "").lower() not in ("numpy", "fallback"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        pass

BACKEND = "numpy" if _impl is _fallback else "native"

plane_gather = _impl.plane_gather
plane_scatter = _impl.plane_scatter
zvec_gather = _impl.zvec_gather
zvec_scatter = _impl.zvec_scatter
