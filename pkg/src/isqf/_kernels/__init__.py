"""Kernel backend selection.

The compiled extension ``_core`` is preferred when it imported cleanly; the
pure numpy module ``_pure`` is the fallback. Set ``ISQF_PURE=1`` in the
environment to force the fallback (useful for benchmarking and debugging).
"""

import os

from . import _pure

TAIL_EXP = _pure.TAIL_EXP
TAIL_GPD = _pure.TAIL_GPD

if os.environ.get("ISQF_PURE", "") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _pure

BACKEND = "compiled" if _impl is not _pure else "pure"

eval_quantile = _impl.eval_quantile
eval_cdf = _impl.eval_cdf
crps_spline_parts = _impl.crps_spline_parts
crps_spline_grad = _impl.crps_spline_grad
crps_exp_tail = _impl.crps_exp_tail
crps_exp_tail_grad = _impl.crps_exp_tail_grad
