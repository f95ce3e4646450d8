"""Supervised feature ranking by single-split regression loss.

For each feature the value range [f_min, f_max] is divided into ``bins``
uniform segments, giving bins - 1 candidate thresholds
``t_j = f_min + (f_max - f_min) * j / bins``. Each threshold partitions the
samples into x < t (left) and x >= t (right); its cost is the weighted sum of
the two sides' target variances

    R_t = (N_L * R_L + N_R * R_R) / N,

and the feature's score is R_op = min over candidates. Lower scores rank
earlier; ties resolve to the lower feature index. A feature with zero range,
or whose candidates all leave one side empty, scores Var(target).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_COLUMN_BLOCK = 64


@dataclass
class RftResult:
    r_op: np.ndarray  # (P,) optimized loss per feature
    ranking: np.ndarray  # (P,) feature indices, ascending r_op
    selected: np.ndarray  # (K,) first K of ranking (empty until selection)
    bins: int
    f_min: np.ndarray  # (P,)
    f_max: np.ndarray  # (P,)
    target_variance: float

    def top(self, k: int) -> np.ndarray:
        return self.ranking[:k].copy()

    def with_selected(self, k: int) -> "RftResult":
        if not 1 <= k <= self.ranking.size:
            raise ValueError(f"keep count {k} out of range 1..{self.ranking.size}")
        return replace(self, selected=self.top(k))


def rft_rank(features: np.ndarray, target: np.ndarray, bins: int = 16) -> RftResult:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("features must be a nonempty (N, P) matrix")
    n, p = x.shape
    if y.shape != (n,):
        raise ValueError(f"target shape {y.shape} does not match {n} rows")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n < 2 * bins:
        raise ValueError(f"need at least {2 * bins} samples for {bins} bins, got {n}")

    var_y = float(y.var())
    r_op = np.full(p, var_y)
    f_min = x.min(axis=0)
    f_max = x.max(axis=0)
    steps = np.arange(1, bins) / bins

    for start in range(0, p, _COLUMN_BLOCK):
        for j in range(start, min(start + _COLUMN_BLOCK, p)):
            lo, hi = f_min[j], f_max[j]
            if not lo < hi:
                continue
            order = np.argsort(x[:, j], kind="stable")
            xs = x[order, j]
            ys = y[order]
            c1 = np.cumsum(ys)
            c2 = np.cumsum(ys * ys)
            thresholds = lo + (hi - lo) * steps
            nl = np.searchsorted(xs, thresholds, side="left")
            nl = nl[(nl > 0) & (nl < n)]
            if nl.size == 0:
                continue
            sl = c1[nl - 1]
            ssl = c2[nl - 1]
            sr = c1[-1] - sl
            ssr = c2[-1] - ssl
            nr = n - nl
            rt = (ssl - sl * sl / nl) + (ssr - sr * sr / nr)
            r_op[j] = max(float(rt.min()) / n, 0.0)

    ranking = np.lexsort((np.arange(p), r_op))
    return RftResult(
        r_op=r_op,
        ranking=ranking.astype(np.int64),
        selected=np.empty(0, dtype=np.int64),
        bins=bins,
        f_min=f_min,
        f_max=f_max,
        target_variance=var_y,
    )


def rft_select(features: np.ndarray, target: np.ndarray, bins: int, keep: int) -> np.ndarray:
    """Indices of the ``keep`` best-ranked features."""
    result = rft_rank(features, target, bins)
    if not 1 <= keep <= result.ranking.size:
        raise ValueError(f"keep count {keep} out of range 1..{result.ranking.size}")
    return result.top(keep)
