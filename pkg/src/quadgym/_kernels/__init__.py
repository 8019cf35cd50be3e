"""Kernel backend selection.

The simulation hot loop exists twice: a compiled Cython extension (``_core``)
and a vectorized NumPy reference (``fallback``). Both are kept bit-identical;
the compiled one is simply faster. Import preference is the extension, unless
it is unavailable or ``QUADGYM_FORCE_FALLBACK=1`` is set.
"""

import os

from . import fallback

try:
    if os.environ.get("QUADGYM_FORCE_FALLBACK", "0") == "1":
        raise ImportError("fallback forced via QUADGYM_FORCE_FALLBACK")
    from . import _core  # type: ignore[attr-defined]

    BACKEND = "compiled"
    physics_step_batch = _core.physics_step_batch
    height_scan_batch = _core.height_scan_batch
except ImportError:
    BACKEND = "fallback"
    physics_step_batch = fallback.physics_step_batch
    height_scan_batch = fallback.height_scan_batch


def available_backends():
    """Names of importable backends (the reference one always exists)."""
    names = ["fallback"]
    try:
        from . import _core  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return (physics_step_batch, height_scan_batch) for an explicit backend."""
    if name == "fallback":
        return fallback.physics_step_batch, fallback.height_scan_batch
    if name == "compiled":
        from . import _core

        return _core.physics_step_batch, _core.height_scan_batch
    raise ValueError(f"unknown backend {name!r}; expected 'compiled' or 'fallback'")
