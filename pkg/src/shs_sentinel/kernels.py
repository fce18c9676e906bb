"""Backend selection for the hot loops.

The compiled extension is used when it was built; ``SHS_SENTINEL_PURE=1``
forces the NumPy fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("SHS_SENTINEL_PURE", "") in ("", "0"):
    _impl = _compiled
    BACKEND = "cython"
else:
    _impl = _kernels_py
    BACKEND = "python"


def available_backends():
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


simulate_lti = _impl.simulate_lti
propagate = _impl.propagate
residual_scan = _impl.residual_scan
residuals_all = _impl.residuals_all
sq_distances = _impl.sq_distances
