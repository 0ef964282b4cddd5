"""Select the compiled kernels when available, the pure-Python ones otherwise.

Setting ``COCO_PURE_PYTHON=1`` forces the fallback (used by the benchmark and
by the backend-equivalence tests).
"""

import os

if os.environ.get("COCO_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _fallback as impl
else:
    try:
        from . import _core as impl
    except ImportError:  # extension not built
        from . import _fallback as impl

BACKEND = impl.BACKEND
COMPILED = BACKEND == "compiled"

jacobi_eigh = impl.jacobi_eigh
project_psd_floor = impl.project_psd_floor
project_dsy = impl.project_dsy
