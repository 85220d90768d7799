"""Numba backend selection.

Hot numeric kernels in :mod:`copgmm._kernels` are compiled with numba when
available.  Setting the environment variable ``COPGMM_NUMBA=0`` before import
selects the interpreted fallback path (same code, no compilation), which is
useful for debugging and for the kernel benchmark in ``benchmarks/``.
"""
import os

_flag = os.environ.get("COPGMM_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "off", "no")

NUMBA_ENABLED = False

if _want_numba:
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def jit(func):
        return _njit(cache=True)(func)
else:
    def jit(func):
        return func
