"""NumPy fallback for the hot numeric kernels.

Same contracts as the compiled module in ``_cykernels.pyx``; used when the
extension is unavailable or when ``PRADA_KERNELS=py`` is set.
"""

from __future__ import annotations

import numpy as np


def mean_rows(mat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Mean of the selected rows of ``mat``. ``idx`` must be non-empty."""
    if len(idx) == 0:
        raise ValueError("mean_rows: empty index list")
    return mat[idx].mean(axis=0)


def matvec(mat: np.ndarray, v: np.ndarray) -> np.ndarray:
    return mat @ v


def bilinear_score(q: np.ndarray, w: np.ndarray, d: np.ndarray) -> float:
    return float(q @ (w @ d))


def cosine_scores(mat: np.ndarray, norms: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of ``v`` against every row of ``mat``.

    ``norms`` are precomputed row L2 norms. Rows with zero norm score -2.0
    (below any real cosine) so callers never select them.
    """
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ValueError("cosine_scores: zero-norm query vector")
    dots = mat @ v
    out = np.full(mat.shape[0], -2.0)
    nz = norms > 0.0
    out[nz] = dots[nz] / (norms[nz] * vnorm)
    return out


def hinge_total(adv_score: float, others: np.ndarray, beta: float) -> tuple[float, int]:
    """Sum of max(0, beta - adv_score + s) over ``others`` and the count of
    strictly positive terms."""
    margins = beta - adv_score + others
    active = margins > 0.0
    return float(margins[active].sum()), int(active.sum())
