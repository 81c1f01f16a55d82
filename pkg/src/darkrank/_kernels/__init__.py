"""Backend selection for the permutation-enumeration hot loops.

The compiled Cython kernels are used when the extension built; otherwise the
numpy reference implementations take over. Set DARKRANK_NO_EXT=1 to force the
fallback (used by the benchmark and the backend-equivalence tests).
"""

import os

from . import _reference

_impl = None
if not os.environ.get("DARKRANK_NO_EXT"):
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = None

BACKEND = "compiled" if _impl is not None else "numpy"

if _impl is not None:
    all_log_probs = _impl.all_log_probs
    cross_stats = _impl.cross_stats
else:
    all_log_probs = _reference.all_log_probs
    cross_stats = _reference.cross_stats

# strict wide-spread paths are cold; they only exist in the reference module
all_log_probs_strict = _reference.all_log_probs_strict
cross_stats_strict = _reference.cross_stats_strict
SAFE_SPREAD = _reference.SAFE_SPREAD
