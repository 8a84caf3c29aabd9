"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy twins in ``_fallback``. Set ``LMOLAB_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the active choice.
"""

import os

from . import _fallback

_compiled = None
if os.environ.get("LMOLAB_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backends():
    """Map of backend name -> module, for parity tests and benchmarks."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


jacobi_svd_columns = _impl.jacobi_svd_columns
max_select = _impl.max_select
sign_vector_max = _impl.sign_vector_max
nondominated_mask = _impl.nondominated_mask
