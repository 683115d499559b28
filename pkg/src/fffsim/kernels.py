"""Kernel backend selection.

The compiled extension is used when it imports; set ``FFFSIM_KERNELS=python``
to force the pure-Python fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("FFFSIM_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

active = _impl
ic0 = _impl.ic0
pcg = _impl.pcg
python = _kernels_py

try:
    from . import _kernels as compiled
except ImportError:
    compiled = None


def compiled_available() -> bool:
    return compiled is not None
