"""Backend selection for the hot numeric kernels.

The jitted path in ``_kernels_nb`` is used by default.  Setting the
environment variable ``CATRNET_DISABLE_NUMBA=1`` (before import) selects the
pure-numpy fallback in ``_kernels_np``, as does a failing numba import.
``benchmarks/bench_kernels.py`` compares the two paths head to head.
"""

import os

from . import _kernels_np

_DISABLED = os.environ.get("CATRNET_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

if not _DISABLED:
    try:
        from . import _kernels_nb as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = _kernels_np
        BACKEND = "numpy"
else:
    _impl = _kernels_np
    BACKEND = "numpy"

bspline_basis = _impl.bspline_basis
halton_points = _impl.halton_points
cqr_irls_pass = _impl.cqr_irls_pass
argmin_abs_grid = _impl.argmin_abs_grid
ll_gram = _impl.ll_gram
ll_sandwich = _impl.ll_sandwich

epanechnikov_weights = _kernels_np.epanechnikov_weights
