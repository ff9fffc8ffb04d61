"""Kernel backend selection.

Imports the compiled extension when present, otherwise the pure-NumPy
twin. ``EXPAVG_BACKEND=py`` forces the fallback (useful for the
benchmark and for cross-checking); ``EXPAVG_BACKEND=c`` makes a missing
extension a hard error.
"""

from __future__ import annotations

import os

_requested = os.environ.get("EXPAVG_BACKEND", "").strip().lower()

if _requested not in ("", "c", "py"):
    raise ImportError(f"EXPAVG_BACKEND must be 'c' or 'py', got {_requested!r}")

if _requested == "py":
    from . import _pykernels as kernels
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested == "c":
            raise
        from . import _pykernels as kernels  # type: ignore[no-redef]

BACKEND_NAME: str = kernels.BACKEND_NAME

pava = kernels.pava
cs_loglik = kernels.cs_loglik
grad_curv = kernels.grad_curv
kkt_residual = kernels.kkt_residual
icm_fit = kernels.icm_fit
fit_profile = kernels.fit_profile
