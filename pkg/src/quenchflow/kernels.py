"""Backend selection for the event kernels.

The compiled extension (``quenchflow._core``) is preferred when importable;
the pure-Python module ``quenchflow._reference`` is the fallback and the
semantic reference.  Set ``QUENCHFLOW_BACKEND=python`` to force the fallback,
e.g. for benchmarking or debugging.  Both backends consume identical event
arrays and must produce bit-identical trajectories.
"""

from __future__ import annotations

import os

from . import _reference

_forced = os.environ.get("QUENCHFLOW_BACKEND", "").lower()

if _forced in ("", "compiled", "c"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _forced:
            raise
        _impl = _reference
        BACKEND = "python"
elif _forced == "python":
    _impl = _reference
    BACKEND = "python"
else:
    raise ValueError(f"unknown QUENCHFLOW_BACKEND={_forced!r}")


def active():
    """The kernel module in use for bulk evolution."""
    return _impl


def reference():
    """The pure-Python reference kernels (always available)."""
    return _reference


def compiled_or_none():
    try:
        from . import _core

        return _core
    except ImportError:
        return None
