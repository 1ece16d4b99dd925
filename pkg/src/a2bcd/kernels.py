"""Kernel backend selection.

The compiled extension is used when it was built; setting the environment
variable ``A2BCD_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("A2BCD_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
impl = BACKENDS[BACKEND]


def get(name=None):
    """Kernel module for backend ``name`` (default: the one selected at import)."""
    if name is None:
        return impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None
