"""Optional numba compilation for the hot loops.

Set ``PMPSCHED_DISABLE_JIT=1`` to run every kernel as plain Python over
numpy arrays.  Both paths consume the same inputs and must produce
bit-identical traces.
"""

from __future__ import annotations

import os

JIT_DISABLED = os.environ.get("PMPSCHED_DISABLE_JIT", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and not JIT_DISABLED


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or the identity, depending on the flag."""
    if not USE_NUMBA:
        if fn is None:
            return lambda f: f
        return fn
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if fn is None:
        return _numba.njit(**opts)
    return _numba.njit(**opts)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "python"
