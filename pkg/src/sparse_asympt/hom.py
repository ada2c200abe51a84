"""Homomorphism search backend selection.

The compiled extension is used when it imports; ``SPARSE_ASYMPT_PURE=1``
forces the pure-Python kernel.
"""

import os

from . import _hom_py

if os.environ.get("SPARSE_ASYMPT_PURE") == "1":
    find_hom = _hom_py.find_hom
    BACKEND = "python"
else:
    try:
        from ._hom_ext import find_hom
        BACKEND = "compiled"
    except ImportError:  # extension not built
        find_hom = _hom_py.find_hom
        BACKEND = "python"

__all__ = ["find_hom", "BACKEND"]
