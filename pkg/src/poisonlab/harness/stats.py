"""Exact Wilcoxon signed-rank test and trailing-window maxima."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

MAX_EXACT_N = 25


def wilcoxon_signed_rank(a, b, alternative: str = "greater"):
    """Exact one-sided signed-rank test of ``a - b``; returns ``(W, p)``.

    ``W`` is the rank sum of the positive differences, with zero differences
    dropped and tied magnitudes given average ranks. The null distribution
    comes from enumerating all sign patterns (as a DP over doubled ranks).
    """
    if alternative not in ("greater", "less"):
        raise ValueError("alternative must be 'greater' or 'less'")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("inputs must be one-dimensional and of equal length")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    if n > MAX_EXACT_N:
        raise ValueError(f"exact test supports at most {MAX_EXACT_N} non-zero differences")
    ranks = rankdata(np.abs(d))
    doubled = np.rint(2 * ranks).astype(np.int64)
    w2 = int(doubled[d > 0].sum())
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    total = 2.0**n
    if alternative == "greater":
        p = counts[w2:].sum() / total
    else:
        p = counts[: w2 + 1].sum() / total
    return w2 / 2.0, float(p)


def sliding_window_max(series, window: int = 75) -> np.ndarray:
    if window < 1:
        raise ValueError("window must be at least 1")
    s = np.asarray(series, dtype=np.float64)
    out = np.empty_like(s)
    for i in range(len(s)):
        out[i] = s[max(0, i - window + 1): i + 1].max()
    return out
