"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the NumPy
backend is the fallback. Both produce bit-identical results (enforced by
tests/test_kernels.py), so selection never changes pipeline output.

Set OV3DIS_KERNELS=numpy or OV3DIS_KERNELS=cython to force a backend;
forcing cython raises if the extension is missing.
"""

import os

from . import numpy_backend

_requested = os.environ.get("OV3DIS_KERNELS", "auto").lower()

if _requested not in ("auto", "numpy", "cython"):
    raise RuntimeError(f"OV3DIS_KERNELS must be auto|numpy|cython, got {_requested!r}")

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _accel as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise RuntimeError(
                "OV3DIS_KERNELS=cython but the compiled extension is not available"
            )
if _impl is None:
    _impl = numpy_backend

BACKEND = "cython" if _impl is not numpy_backend else "numpy"

project_points = _impl.project_points
popcount_rows = _impl.popcount_rows
batch_siou = _impl.batch_siou
pairwise_intersections = _impl.pairwise_intersections


def available_backends():
    names = ["numpy"]
    try:
        from . import _accel  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Return the raw backend module by name (for benchmarks and tests)."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _accel
        return _accel
    raise ValueError(f"unknown kernel backend {name!r}")
