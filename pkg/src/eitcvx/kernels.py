"""Kernel selection: compiled extension if importable, numpy otherwise.

Set ``EITCVX_PURE_PYTHON=1`` to force the numpy kernels.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("EITCVX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

residuals = _impl.residuals
fit_gradient = _impl.fit_gradient

__all__ = ["BACKEND", "residuals", "fit_gradient"]
