"""Hot geometric kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it was built and ``MAPGEN_PURE_PYTHON`` is
unset; otherwise the numpy/Python implementations in ``_pykernels`` are used.
Both expose ``bev_iou_pairs``, ``iou3d_pairs``, ``bev_intersection`` and
``raycast`` with identical signatures.
"""
from __future__ import annotations

import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("MAPGEN_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

bev_iou_pairs = _active.bev_iou_pairs
iou3d_pairs = _active.iou3d_pairs
bev_intersection = _active.bev_intersection
raycast = _active.raycast

NO_HIT = python_backend.NO_HIT
GROUND = python_backend.GROUND
