"""Gradient-boosted regression trees with squared-error loss.

Boosting starts from the target mean and fits each tree to the current
residuals. Split search is histogram-based: every feature is quantized once
onto quantile-derived bin edges (edges are actual sample values, so any
strictly increasing feature transform leaves the fitted model's predictions
unchanged). Leaf values are plain residual means. Rows are subsampled per
tree with a seeded generator, so fits are fully deterministic.

Split semantics: a row goes left iff x[feature] <= threshold, where the
threshold is the bin edge in original feature units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitError

_MIN_GAIN = 1e-12
_ROW_CHUNK = 8192


@dataclass(frozen=True)
class GbtConfig:
    tree_count: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    subsample: float = 0.8
    min_samples_leaf: int = 20
    histogram_bins: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 2 <= self.histogram_bins <= 256:
            raise ValueError("histogram_bins must be in 2..256")


@dataclass
class Tree:
    feature: np.ndarray  # int32, -1 marks a leaf
    threshold: np.ndarray  # float64, split value in feature units
    left: np.ndarray  # int32 child ids, -1 at leaves
    right: np.ndarray
    value: np.ndarray  # float64, leaf response (0 at internal nodes)

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass
class GbtModel:
    base_prediction: float
    n_features: int
    config: GbtConfig
    trees: list[Tree] = field(default_factory=list)


def _bin_edges(x: np.ndarray, nb: int) -> list[np.ndarray]:
    qs = np.arange(1, nb) / nb
    edges = []
    for j in range(x.shape[1]):
        col = x[:, j]
        e = np.unique(np.quantile(col, qs, method="lower"))
        edges.append(e)
    return edges


def _bin_matrix(x: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    binned = np.empty(x.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        binned[:, j] = np.searchsorted(e, x[:, j], side="left")
    return binned


class _TreeBuilder:
    """Grows one depth-limited tree on binned columns."""

    def __init__(self, n_bins: int, min_leaf: int):
        self.n_bins = n_bins
        self.min_leaf = min_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.split_bin: list[int] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.split_bin.append(-1)
        return len(self.feature) - 1

    def grow(
        self,
        binned: np.ndarray,
        resid: np.ndarray,
        rows: np.ndarray,
        edges: list[np.ndarray],
        max_depth: int,
    ) -> Tree:
        n, p = binned.shape
        b = self.n_bins
        root = self._new_node()
        node_of = np.full(rows.size, root, dtype=np.int32)
        frontier = [root]
        feat_offsets = np.arange(p, dtype=np.int64) * b

        for _ in range(max_depth):
            if not frontier:
                break
            slot = np.full(len(self.feature), -1, dtype=np.int64)
            for s, nid in enumerate(frontier):
                slot[nid] = s
            n_active = len(frontier)
            size = n_active * p * b
            counts = np.zeros(size, dtype=np.int64)
            sums = np.zeros(size)
            row_slot = slot[node_of]
            live = np.flatnonzero(row_slot >= 0)
            for start in range(0, live.size, _ROW_CHUNK):
                chunk = live[start : start + _ROW_CHUNK]
                base = row_slot[chunk] * (p * b)
                idx = base[:, None] + feat_offsets[None, :] + binned[rows[chunk]]
                flat = idx.ravel()
                counts += np.bincount(flat, minlength=size)
                w = np.broadcast_to(resid[rows[chunk]][:, None], idx.shape).ravel()
                sums += np.bincount(flat, weights=w, minlength=size)

            counts = counts.reshape(n_active, p, b)
            sums = sums.reshape(n_active, p, b)
            next_frontier: list[int] = []
            splits_here: list[tuple[int, int, int, int, int]] = []
            for s, nid in enumerate(frontier):
                nl = np.cumsum(counts[s], axis=1)[:, :-1]
                sl = np.cumsum(sums[s], axis=1)[:, :-1]
                n_tot = int(counts[s, 0].sum())
                s_tot = float(sums[s, 0].sum())
                nr = n_tot - nl
                ok = (nl >= self.min_leaf) & (nr >= self.min_leaf)
                if not ok.any():
                    self.value[nid] = s_tot / n_tot
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = sl * sl / nl + (s_tot - sl) ** 2 / nr
                gain = np.where(ok, gain, -np.inf) - s_tot * s_tot / n_tot
                flat_best = int(np.argmax(gain))
                f, edge_bin = divmod(flat_best, b - 1)
                if gain.ravel()[flat_best] <= _MIN_GAIN:
                    self.value[nid] = s_tot / n_tot
                    continue
                lid = self._new_node()
                rid = self._new_node()
                self.feature[nid] = f
                self.split_bin[nid] = edge_bin
                self.threshold[nid] = float(edges[f][edge_bin])
                self.left[nid] = lid
                self.right[nid] = rid
                splits_here.append((nid, f, edge_bin, lid, rid))
                next_frontier.extend((lid, rid))

            if splits_here:
                live_rows = np.flatnonzero(slot[node_of] >= 0)
                for nid, f, edge_bin, lid, rid in splits_here:
                    members = live_rows[node_of[live_rows] == nid]
                    goes_left = binned[rows[members], f] <= edge_bin
                    node_of[members] = np.where(goes_left, lid, rid)
            frontier = next_frontier

        # Whatever is still open at the depth limit becomes a leaf.
        for nid in frontier:
            members = rows[node_of == nid]
            self.value[nid] = float(resid[members].mean())
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value),
        )


def _route_binned(tree: Tree, binned: np.ndarray, split_bins: np.ndarray) -> np.ndarray:
    node = np.zeros(binned.shape[0], dtype=np.int32)
    while True:
        active = np.flatnonzero(tree.feature[node] >= 0)
        if active.size == 0:
            return node
        cur = node[active]
        f = tree.feature[cur]
        goes_left = binned[active, f] <= split_bins[cur]
        node[active] = np.where(goes_left, tree.left[cur], tree.right[cur])


def gbt_fit(x: np.ndarray, y: np.ndarray, cfg: GbtConfig) -> GbtModel:
    """Fit a boosted ensemble of ``cfg.tree_count`` trees.

    Inputs must be finite; N must be at least ``min_samples_leaf``.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise ValueError("features must be an (N, P) matrix with N >= 2 and P >= 1")
    if y.shape != (x.shape[0],):
        raise ValueError("target length does not match feature rows")
    if not np.isfinite(x).all() or not np.isfinite(y).all():
        raise ValueError("non-finite values in training data")
    n = x.shape[0]
    if n < cfg.min_samples_leaf:
        raise FitError(f"need at least min_samples_leaf={cfg.min_samples_leaf} rows, got {n}")

    edges = _bin_edges(x, cfg.histogram_bins)
    binned = _bin_matrix(x, edges)
    base = float(y.mean())
    resid = y - base
    model = GbtModel(base_prediction=base, n_features=x.shape[1], config=cfg)
    n_sub = max(1, int(round(cfg.subsample * n)))
    for t in range(cfg.tree_count):
        if cfg.subsample < 1.0:
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, t)))
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)
        builder = _TreeBuilder(cfg.histogram_bins, cfg.min_samples_leaf)
        tree = builder.grow(binned, resid, rows, edges, cfg.max_depth)
        split_bins = np.asarray(builder.split_bin, dtype=np.int64)
        leaf = _route_binned(tree, binned, split_bins)
        resid -= cfg.learning_rate * tree.value[leaf]
        model.trees.append(tree)
    return model


class _FlatTrees:
    """All trees' nodes concatenated with tree-global ids for fast routing.

    Leaves point at themselves and read a zero sentinel column appended to
    the input (0 <= 0 keeps them in place), so routing needs no activity
    mask: exactly max_depth gather rounds settle every row. ``adjacent`` is
    True when every split's right child sits at left + 1, letting the next
    node come from one gather plus the comparison bit.
    """

    def __init__(self, trees: list[Tree], n_features: int):
        sizes = [t.n_nodes for t in trees]
        offsets = np.concatenate([[0], np.cumsum(sizes[:-1])]).astype(np.int64)
        feature = np.concatenate([t.feature for t in trees]).astype(np.int64)
        self.feature = np.where(feature >= 0, feature, n_features)
        self.threshold = np.concatenate([t.threshold for t in trees])
        self.value = np.concatenate([t.value for t in trees])
        self.roots = offsets
        left = np.empty(self.feature.size, dtype=np.int64)
        right = np.empty(self.feature.size, dtype=np.int64)
        adjacent = True
        for t, off in zip(trees, offsets):
            ids = np.arange(t.n_nodes, dtype=np.int64) + off
            split = t.feature >= 0
            left[ids] = np.where(split, t.left + off, ids)
            right[ids] = np.where(split, t.right + off, ids)
            if adjacent and not np.array_equal(t.right[split], t.left[split] + 1):
                adjacent = False
        self.left = left
        self.right = right
        self.adjacent = adjacent


def gbt_predict(model: GbtModel, x: np.ndarray, n_trees: int | None = None) -> np.ndarray:
    """Predict rows of ``x``; optionally truncate to the first ``n_trees`` trees."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(
            f"feature width {x.shape[1] if x.ndim == 2 else '?'} does not match "
            f"model width {model.n_features}"
        )
    trees = model.trees if n_trees is None else model.trees[:n_trees]
    n = x.shape[0]
    if not trees or n == 0:
        return np.full(n, model.base_prediction)
    cached = getattr(model, "_route_cache", None)
    if cached is None or cached[0] != len(trees):
        cached = (len(trees), _FlatTrees(trees, model.n_features))
        model._route_cache = cached
    ft = cached[1]
    xs = np.concatenate([x, np.zeros((n, 1))], axis=1).ravel()
    row_base = (np.arange(n, dtype=np.int64) * (model.n_features + 1))[:, None]
    node = np.broadcast_to(ft.roots, (n, ft.roots.size))
    for _ in range(model.config.max_depth):
        xv = xs[ft.feature[node] + row_base]
        goes_right = xv > ft.threshold[node]
        if ft.adjacent:
            node = ft.left[node] + goes_right
        else:
            node = np.where(goes_right, ft.right[node], ft.left[node])
    lr = model.config.learning_rate
    return model.base_prediction + lr * ft.value[node].sum(axis=1)


def training_mse(model: GbtModel, x: np.ndarray, y: np.ndarray, n_trees: int | None = None) -> float:
    pred = gbt_predict(model, x, n_trees)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


def dump_trees(model: GbtModel, max_trees: int | None = None) -> str:
    """Human-readable indented rendering of the fitted trees."""
    lines = [f"base_prediction {float(model.base_prediction)!r}"]
    trees = model.trees if max_trees is None else model.trees[:max_trees]
    for i, tree in enumerate(trees):
        lines.append(f"tree {i}")
        stack = [(0, 1)]
        while stack:
            nid, depth = stack.pop()
            pad = "  " * depth
            if tree.feature[nid] < 0:
                lines.append(f"{pad}leaf value={float(tree.value[nid])!r}")
            else:
                lines.append(
                    f"{pad}if f{tree.feature[nid]} <= {float(tree.threshold[nid])!r}"
                )
                stack.append((int(tree.right[nid]), depth + 1))
                stack.append((int(tree.left[nid]), depth + 1))
    return "\n".join(lines)
