"""Saliency evaluation measures: CC, SIM, NSS, AUC (fixation-threshold
variant), and center-bias-corrected shuffled AUC.

Distribution measures (CC, SIM) compare a predicted map against a
ground-truth map of the same resolution. Location measures (NSS, the AUCs)
compare the map against discrete fixation points; repeated points collapse to
the underlying binary fixation mask. ROC areas sweep a threshold over the
positive scores with >= tie handling, integrate trapezoidally, and include
the (0,0) and (1,1) endpoints, so a constant map scores exactly 0.5.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

METRIC_NAMES = ("auc_j", "s_auc", "cc", "sim", "nss")


@dataclass(frozen=True)
class FixationMap:
    height: int
    width: int
    points: np.ndarray  # (N, 2) integer (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if pts.size:
            if pts[:, 0].min() < 0 or pts[:, 0].max() >= self.width:
                raise ValueError("fixation x coordinate out of bounds")
            if pts[:, 1].min() < 0 or pts[:, 1].max() >= self.height:
                raise ValueError("fixation y coordinate out of bounds")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def unique_flat(self) -> np.ndarray:
        """Unique fixation pixels as flat row-major indices."""
        return np.unique(self.points[:, 1] * self.width + self.points[:, 0])

    def mask(self) -> np.ndarray:
        out = np.zeros(self.height * self.width, dtype=bool)
        out[self.unique_flat()] = True
        return out.reshape(self.height, self.width)

    def rescaled(self, height: int, width: int) -> "FixationMap":
        """Map points into another resolution (scale, floor, clip)."""
        if self.n_points == 0:
            return FixationMap(height, width, self.points.copy())
        pts = self.points.astype(np.float64)
        pts[:, 0] *= width / self.width
        pts[:, 1] *= height / self.height
        pts = np.floor(pts).astype(np.int64)
        pts[:, 0] = np.clip(pts[:, 0], 0, width - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, height - 1)
        return FixationMap(height, width, pts)


def _check_pair(pred: np.ndarray, other_shape: tuple) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("saliency map must be 2-D")
    if tuple(p.shape) != tuple(other_shape):
        raise ValueError(f"resolution mismatch: {p.shape} vs {other_shape}")
    return p


def cc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pearson correlation between the two maps, pixels as samples."""
    g = np.asarray(gt, dtype=np.float64)
    p = _check_pair(pred, g.shape)
    ps = p.std()
    gs = g.std()
    if ps == 0.0 or gs == 0.0:
        raise UndefinedMetricError("correlation undefined for a constant map")
    return float(((p - p.mean()) * (g - g.mean())).mean() / (ps * gs))


def sim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Histogram intersection of the two maps, each normalized to unit sum."""
    g = np.asarray(gt, dtype=np.float64)
    p = _check_pair(pred, g.shape)
    psum = p.sum()
    gsum = g.sum()
    if psum <= 0.0 or gsum <= 0.0:
        raise UndefinedMetricError("similarity undefined for a non-positive-sum map")
    return float(np.minimum(p / psum, g / gsum).sum())


def nss(pred: np.ndarray, fixations: FixationMap) -> float:
    """Mean z-scored prediction over the fixated pixels."""
    p = _check_pair(pred, (fixations.height, fixations.width))
    if fixations.n_points == 0:
        raise ValueError("need at least one fixation")
    std = p.std()
    if std == 0.0:
        raise UndefinedMetricError("NSS undefined for a constant map")
    z = (p - p.mean()) / std
    return float(z.ravel()[fixations.unique_flat()].mean())


def _roc_area(pos: np.ndarray, neg: np.ndarray) -> float:
    """Threshold at each positive score; >= counts as detected on both sides."""
    thresholds = np.unique(pos)[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tpr = 1.0 - np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2.0)


def auc_judd(pred: np.ndarray, fixations: FixationMap) -> float:
    """ROC area with fixated pixels as positives, all other pixels negatives."""
    p = _check_pair(pred, (fixations.height, fixations.width))
    if fixations.n_points == 0:
        raise ValueError("need at least one fixation")
    flat = p.ravel()
    fix_idx = fixations.unique_flat()
    neg_mask = np.ones(flat.size, dtype=bool)
    neg_mask[fix_idx] = False
    if not neg_mask.any():
        raise ValueError("every pixel is fixated; no negatives left")
    return _roc_area(flat[fix_idx], flat[neg_mask])


def shuffled_auc(
    pred: np.ndarray,
    fixations: FixationMap,
    other_fixations,
    seed: int = 0,
    negative_cap_ratio: int = 10,
) -> float:
    """ROC area where negatives are drawn from other images' fixations.

    ``other_fixations`` is an iterable of FixationMap from different images;
    their points are mapped into this map's resolution, pooled, and sampled
    (seeded, without replacement) up to ``negative_cap_ratio`` times the
    positive count.
    """
    p = _check_pair(pred, (fixations.height, fixations.width))
    if fixations.n_points == 0:
        raise ValueError("need at least one fixation")
    pools = []
    for other in other_fixations:
        mapped = other.rescaled(fixations.height, fixations.width)
        if mapped.n_points:
            pools.append(mapped.unique_flat())
    if not pools:
        raise ValueError("need fixations from at least one other image")
    pool = np.concatenate(pools)
    pos_idx = fixations.unique_flat()
    cap = negative_cap_ratio * pos_idx.size
    if pool.size > cap:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5A0C)))
        pool = pool[np.sort(rng.choice(pool.size, size=cap, replace=False))]
    flat = p.ravel()
    return _roc_area(flat[pos_idx], flat[pool])


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    def add(self, name: str, values: dict) -> None:
        self.names.append(name)
        self.rows.append(values)

    def means(self) -> dict:
        out = {}
        for key in METRIC_NAMES:
            out[key] = float(np.mean([row[key] for row in self.rows]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image", *METRIC_NAMES])
        for name, row in zip(self.names, self.rows):
            writer.writerow([name, *(f"{row[k]:.6f}" for k in METRIC_NAMES)])
        if self.rows:
            m = self.means()
            writer.writerow(["mean", *(f"{m[k]:.6f}" for k in METRIC_NAMES)])
        return buf.getvalue()


def evaluate_prediction(
    pred: np.ndarray,
    gt: np.ndarray,
    fixations: FixationMap,
    other_fixations,
    seed: int = 0,
) -> dict:
    """All five measures for one image."""
    return {
        "auc_j": auc_judd(pred, fixations),
        "s_auc": shuffled_auc(pred, fixations, other_fixations, seed=seed),
        "cc": cc(pred, gt),
        "sim": sim(pred, gt),
        "nss": nss(pred, fixations),
    }
