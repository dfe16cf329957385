"""Backend selection for the simulation hot loop.

The compiled extension is used when it was built; set ``TRAFFICLAB_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
advance_lanes = _kernels_py.advance_lanes

if os.environ.get("TRAFFICLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        advance_lanes = _kernels.advance_lanes
        BACKEND = "cython"

__all__ = ["advance_lanes", "BACKEND"]
