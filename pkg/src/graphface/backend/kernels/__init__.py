"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set GRAPHFACE_NO_EXT=1 to force the fallback (used by the benchmark and the
cross-implementation tests).
"""
import os

if os.environ.get("GRAPHFACE_NO_EXT"):
    from . import reference as _impl
    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
        COMPILED = True
    except ImportError:
        from . import reference as _impl
        COMPILED = False

im2col = _impl.im2col
col2im = _impl.col2im
