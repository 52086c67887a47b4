"""Optional numba acceleration for the hot numeric kernels.

Set ``MMTAB_DISABLE_NUMBA=1`` to force the pure-numpy code paths.  The flag is
read once, at import time.
"""
import os

_DISABLED = os.environ.get("MMTAB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by MMTAB_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False


def jit(fn):
    """Compile ``fn`` in nopython mode, or return None when numba is off."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)
