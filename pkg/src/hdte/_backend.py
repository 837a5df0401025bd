"""Pick the coordinate-descent kernel at import time.

The compiled extension is preferred; setting ``HDTE_PURE_PYTHON=1`` forces
the pure-Python fallback (used by the benchmark and the parity tests).
"""

import os

from . import _cd_py

try:
    from . import _cd_kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("HDTE_PURE_PYTHON"):
    cd_sweeps = _compiled.cd_sweeps
    BACKEND = "cython"
else:
    cd_sweeps = _cd_py.cd_sweeps
    BACKEND = "python"


def get_kernel(name=None):
    """Return a specific kernel by name ("cython" or "python")."""
    if name is None:
        return cd_sweeps
    if name == "python":
        return _cd_py.cd_sweeps
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel hdte._cd_kernel is not built")
        return _compiled.cd_sweeps
    raise ValueError(f"unknown kernel {name!r}")
