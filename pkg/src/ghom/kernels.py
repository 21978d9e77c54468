"""Backend selection for the hot numerical kernels.

The compiled extension is used when it imports cleanly; setting
``GHOM_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from ghom import _jacobi_py

python_jacobi_eigh = _jacobi_py.jacobi_eigh

try:
    from ghom import _jacobi as _compiled
except ImportError:  # extension not built
    _compiled = None

compiled_jacobi_eigh = _compiled.jacobi_eigh if _compiled is not None else None

if _compiled is not None and os.environ.get("GHOM_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
    jacobi_eigh = compiled_jacobi_eigh
else:
    BACKEND = "python"
    jacobi_eigh = python_jacobi_eigh

__all__ = ["BACKEND", "jacobi_eigh", "python_jacobi_eigh", "compiled_jacobi_eigh"]
