"""Numeric kernel dispatch.

The compiled Cython module is used when available; a NumPy implementation
with identical contracts is the fallback. Selection happens at import and
can be forced with the ``PRADA_KERNELS`` environment variable (``auto``,
``c`` or ``py``) or switched at runtime with :func:`set_backend` (used by
the backend-comparison benchmark and the consistency tests).
"""

from __future__ import annotations

import os

from . import _pykernels

_BACKENDS = {"py": _pykernels}
try:
    from . import _cykernels

    _BACKENDS["c"] = _cykernels
except ImportError:
    _cykernels = None

_requested = os.environ.get("PRADA_KERNELS", "auto").lower()
if _requested in ("py", "python"):
    _impl = _pykernels
elif _requested == "c":
    if _cykernels is None:
        raise ImportError("PRADA_KERNELS=c but the compiled kernels are not built")
    _impl = _cykernels
else:
    _impl = _cykernels if _cykernels is not None else _pykernels


def get_backend() -> str:
    """Name of the active backend: ``"c"`` or ``"py"``."""
    return "c" if _impl is _cykernels and _cykernels is not None else "py"


def set_backend(name: str) -> None:
    global _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; built: {sorted(_BACKENDS)}")
    _impl = _BACKENDS[name]


def mean_rows(mat, idx):
    return _impl.mean_rows(mat, idx)


def matvec(mat, v):
    return _impl.matvec(mat, v)


def bilinear_score(q, w, d):
    return _impl.bilinear_score(q, w, d)


def cosine_scores(mat, norms, v):
    return _impl.cosine_scores(mat, norms, v)


def hinge_total(adv_score, others, beta):
    return _impl.hinge_total(adv_score, others, beta)
