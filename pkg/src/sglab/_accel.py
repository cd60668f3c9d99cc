"""Pick the compiled core when available; SGLAB_PURE=1 forces the fallback."""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("SGLAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback

# the numpy version of fourpoint_sum runs on BLAS and beats the compiled loop
fourpoint_sum = _fallback.fourpoint_sum
best_matching = _impl.best_matching
merge_blocks = _impl.merge_blocks
