"""Kernel backend selection.

The compiled extension is preferred; set ``COVPLAN_PURE_PYTHON=1`` to force
the numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

from covplan import _kernels_py

if os.environ.get("COVPLAN_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from covplan import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
sumtree_set = _impl.sumtree_set
sumtree_find = _impl.sumtree_find

__all__ = ["BACKEND", "im2col3x3", "col2im3x3", "sumtree_set", "sumtree_find"]
