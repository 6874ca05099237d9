"""Backend selection for the assembly kernels.

The compiled extension is used when it was built; setting
``FRACMS_PURE_PYTHON=1`` forces the NumPy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("FRACMS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

scatter_add = _impl.scatter_add
element_average = _impl.element_average
