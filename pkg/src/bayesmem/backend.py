"""Kernel backend selection.

The compiled extension (`bayesmem._core_c`) is used when importable, the
NumPy implementation otherwise.  `BAYESMEM_BACKEND=python|c` forces a
choice; forcing `c` without the extension built is an import error rather
than a silent fallback.
"""

from __future__ import annotations

import os

from bayesmem import _core_py

_FORCED = os.environ.get("BAYESMEM_BACKEND", "").strip().lower()

if _FORCED in ("", "c"):
    try:
        from bayesmem import _core_c as _impl

        BACKEND = "c"
    except ImportError:
        if _FORCED == "c":
            raise ImportError(
                "BAYESMEM_BACKEND=c but the compiled extension is not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )
        _impl = _core_py
        BACKEND = "python"
elif _FORCED == "python":
    _impl = _core_py
    BACKEND = "python"
else:
    raise ImportError(f"unknown BAYESMEM_BACKEND value: {_FORCED!r}")


def active_backend() -> str:
    """Name of the kernel implementation in use: 'c' or 'python'."""
    return BACKEND


gmm_fit_batch = _impl.gmm_fit_batch
gmm_score_batch = _impl.gmm_score_batch
gmm_resp_stats = _impl.gmm_resp_stats
kde_score_batch = _impl.kde_score_batch

# Always-available NumPy helpers (not performance critical).
gmm_feature_log_pdf = _core_py.gmm_feature_log_pdf
kde_feature_log_pdf = _core_py.kde_feature_log_pdf
population_std = _core_py.population_std

HALF_LOG_2PI = _core_py.HALF_LOG_2PI
MIN_LOG_PDF = _core_py.MIN_LOG_PDF
