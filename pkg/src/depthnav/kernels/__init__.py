"""Geometry hot loops with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``DEPTHNAV_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation and
:func:`use_backend` switches at runtime (benchmarks and cross-checks use it).
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _geometry as _compiled
except ImportError:  # extension not built
    _compiled = None

_IMPLS = {"python": _fallback}
if _compiled is not None:
    _IMPLS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None and os.environ.get("DEPTHNAV_PURE_PYTHON") != "1" else "python"
_impl = _IMPLS[BACKEND]

KIND_CODES = {"sphere": 0, "box": 1, "cylinder": 2, "cone": 3}


def available_backends() -> list[str]:
    return list(_IMPLS)


def use_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    BACKEND = name
    _impl = _IMPLS[name]


def raycast_batch(origins, dirs, max_range, packed) -> np.ndarray:
    """Nearest hit distance along each unit ray, ``max_range`` when nothing is hit."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    max_range = np.array(np.broadcast_to(max_range, (len(origins),)), dtype=np.float64)
    return _impl.raycast_batch(origins, dirs, max_range, *packed)


def sdf_batch(points, packed, cap: float = np.inf) -> np.ndarray:
    """Minimum signed distance from each point to the packed obstacles."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _impl.sdf_batch(points, *packed, float(cap))
