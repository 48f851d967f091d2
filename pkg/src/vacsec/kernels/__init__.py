"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension is used when it was built and importable; set
``VACSEC_PURE_PYTHON=1`` to force the fallback.  Both backends expose
``conv_injection``, ``kcl_residual``, ``solve_kcl`` and ``grid_eval``.
"""
from __future__ import annotations

import os

from . import _pykernels

_backend = _pykernels
if os.environ.get("VACSEC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = _pykernels

BACKEND: str = _backend.BACKEND
conv_injection = _backend.conv_injection
kcl_residual = _backend.kcl_residual
solve_kcl = _backend.solve_kcl
grid_eval = _backend.grid_eval


def backends() -> dict:
    """All importable backends by name, for comparisons and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
