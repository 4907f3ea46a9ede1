"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``FEDMS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("FEDMS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

shapley_from_table = _impl.shapley_from_table
confusion_from_scores = _impl.confusion_from_scores

__all__ = ["BACKEND", "shapley_from_table", "confusion_from_scores"]
