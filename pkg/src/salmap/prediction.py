"""Multi-path saliency prediction on top of the feature pipeline.

Each feature set gets a regression head trained against the pooled ground
truth. The two coarsest maps are upsampled and corrected by residual heads
fed from the finer sets (d16 features correct the d64 map, d8 features
correct the d32 map). The four resulting maps are upsampled to the d4 grid
and fused per pixel from their stacked 5x5 neighborhoods by a final
regressor, then the fused map is upsampled to full resolution, floored at a
quantile, blurred, and min-max normalized.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .config import Config
from .errors import FitError
from .gbt import GbtConfig, GbtModel, gbt_fit, gbt_predict
from .imaging import gaussian_blur, pyramid_resolution, upsample_to
from .pipeline import (
    SET_FACTOR,
    SET_NAMES,
    FeaturePipeline,
    _PIXEL_SALT,
    extract_feature_sets,
    pixel_fraction,
    sample_pixels,
)
from .rft import RftResult, rft_rank

ENSEMBLE_ORDER = ("d8", "d16", "d32", "d64")
# (set providing correction features, set whose map gets corrected)
RESIDUAL_PAIRS = (("d16", "d64"), ("d8", "d32"))

_HEAD_SEED_OFFSET = {
    "map:d8": 708,
    "map:d16": 716,
    "map:d32": 732,
    "map:d64": 764,
    "residual:d8": 808,
    "residual:d16": 816,
    "ensemble": 904,
}


@dataclass
class Head:
    rft: RftResult
    model: GbtModel


@dataclass
class PathHeads:
    map_heads: dict[str, Head]
    residual_heads: dict[str, Head]  # keyed by the set providing the features


@dataclass
class EnsembleHead:
    model: GbtModel
    window: int = 5


@dataclass(frozen=True)
class PostProcessConfig:
    floor_quantile: float = 0.5
    blur_kernel_side: int = 10
    blur_sigma: float = 2.5


@dataclass
class SaliencyModel:
    pipeline: FeaturePipeline
    heads: PathHeads
    ensemble: EnsembleHead
    postproc: PostProcessConfig

    @property
    def config(self) -> Config:
        return self.pipeline.config


class SetProvider:
    """Per-image feature sets, recomputed on demand or cached on disk."""

    def __init__(self, pyramids, fp: FeaturePipeline, cache_dir: str = ""):
        self.pyramids = pyramids
        self.fp = fp
        self.cache_dir = cache_dir
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def __call__(self, i: int) -> dict[str, np.ndarray]:
        if not self.cache_dir:
            return extract_feature_sets(self.pyramids[i], self.fp)
        path = os.path.join(self.cache_dir, f"sets_{i:05d}.npz")
        if os.path.exists(path):
            with np.load(path) as data:
                return {name: data[name] for name in SET_NAMES}
        sets = extract_feature_sets(self.pyramids[i], self.fp)
        np.savez(path, **sets)
        return sets


def _gbt_config(cfg: Config, head: str) -> GbtConfig:
    return GbtConfig(
        tree_count=cfg.gbt_trees,
        max_depth=cfg.gbt_depth,
        learning_rate=cfg.gbt_learning_rate,
        subsample=cfg.gbt_subsample,
        min_samples_leaf=cfg.gbt_min_samples_leaf,
        histogram_bins=cfg.gbt_bins,
        seed=cfg.seed * 1000 + _HEAD_SEED_OFFSET[head],
    )


def _map_keep(cfg: Config, name: str) -> int:
    return {
        "d8": cfg.map_keep_d8,
        "d16": cfg.map_keep_d16,
        "d32": cfg.map_keep_d32,
        "d64": cfg.map_keep_d64,
    }[name]


def _residual_keep(cfg: Config, name: str) -> int:
    return {"d8": cfg.residual_keep_d8, "d16": cfg.residual_keep_d16}[name]


def _head_predict(head: Head, set_arr: np.ndarray) -> np.ndarray:
    h, w, c = set_arr.shape
    x = set_arr.reshape(h * w, c)[:, head.rft.selected]
    return gbt_predict(head.model, x).reshape(h, w)


def _fit_head(x: np.ndarray, y: np.ndarray, keep_cfg: int, cfg: Config, head: str) -> Head:
    ranked = rft_rank(x, y, cfg.rft_bins)
    p = ranked.ranking.size
    keep = p if keep_cfg == 0 else min(keep_cfg, p)
    ranked = ranked.with_selected(keep)
    model = gbt_fit(x[:, ranked.selected], y, _gbt_config(cfg, head))
    return Head(rft=ranked, model=model)


def fit_paths(fp: FeaturePipeline, gt_pyramids, cfg: Config, sets_for, n_images: int,
              timings=None) -> PathHeads:
    """Fit the four map heads, then the two residual-correction heads.

    Residual targets are the pooled ground truth minus the upsampled
    in-sample prediction of the coarser head.
    """
    if n_images < 1:
        raise FitError("no training images")
    if len(gt_pyramids) != n_images:
        raise FitError("missing ground truth for some images")

    def clock(name, start):
        if timings is not None:
            timings.append((name, time.perf_counter() - start))

    t0 = time.perf_counter()
    feats: dict[str, list[np.ndarray]] = {s: [] for s in SET_NAMES}
    tgts: dict[str, list[np.ndarray]] = {s: [] for s in SET_NAMES}
    for i in range(n_images):
        sets = sets_for(i)
        for s in SET_NAMES:
            f = SET_FACTOR[s]
            arr = sets[s]
            n_pix = arr.shape[0] * arr.shape[1]
            pix = sample_pixels(
                n_pix, pixel_fraction(cfg, f), (cfg.seed, _PIXEL_SALT, i, f)
            )
            feats[s].append(arr.reshape(n_pix, -1)[pix])
            tgts[s].append(gt_pyramids[i][f].ravel()[pix])
    clock("head sampling", t0)

    xmat = {s: np.concatenate(feats[s]) for s in SET_NAMES}
    for s in SET_NAMES:
        feats[s].clear()
    map_heads: dict[str, Head] = {}
    for s in SET_NAMES:
        t0 = time.perf_counter()
        y = np.concatenate(tgts[s])
        map_heads[s] = _fit_head(xmat[s], y, _map_keep(cfg, s), cfg, f"map:{s}")
        clock(f"map head {s}", t0)

    t0 = time.perf_counter()
    resid_tgts: dict[str, list[np.ndarray]] = {fine: [] for fine, _ in RESIDUAL_PAIRS}
    for i in range(n_images):
        sets = sets_for(i)
        for fine, coarse in RESIDUAL_PAIRS:
            fine_f = SET_FACTOR[fine]
            coarse_map = _head_predict(map_heads[coarse], sets[coarse])
            up = upsample_to(coarse_map, gt_pyramids[i][fine_f].shape)
            resid = gt_pyramids[i][fine_f] - up
            n_pix = resid.size
            pix = sample_pixels(
                n_pix, pixel_fraction(cfg, fine_f), (cfg.seed, _PIXEL_SALT, i, fine_f)
            )
            resid_tgts[fine].append(resid.ravel()[pix])
    clock("residual targets", t0)

    residual_heads: dict[str, Head] = {}
    for fine, _ in RESIDUAL_PAIRS:
        t0 = time.perf_counter()
        y = np.concatenate(resid_tgts[fine])
        residual_heads[fine] = _fit_head(
            xmat[fine], y, _residual_keep(cfg, fine), cfg, f"residual:{fine}"
        )
        clock(f"residual head {fine}", t0)
    return PathHeads(map_heads=map_heads, residual_heads=residual_heads)


def predict_paths(sets: dict[str, np.ndarray], heads: PathHeads):
    """Per-path maps.

    Returns ``(maps, raw)``: ``raw`` holds each head's direct output at its
    set resolution; in ``maps`` the d32/d64 entries are upsampled one level
    and residual-corrected (to d8/d16 resolution respectively).
    """
    raw = {s: _head_predict(heads.map_heads[s], sets[s]) for s in SET_NAMES}
    maps = {"d8": raw["d8"], "d16": raw["d16"]}
    for fine, coarse in RESIDUAL_PAIRS:
        up = upsample_to(raw[coarse], raw[fine].shape)
        maps[coarse] = up + _head_predict(heads.residual_heads[fine], sets[fine])
    return maps, raw


def neighborhood_vectors(stack: np.ndarray, window: int = 5) -> np.ndarray:
    """Stacked per-pixel neighborhoods, map-major then window-row-major.

    ``stack`` is (M, H, W); output is (H*W, M*window*window) with replicate
    padding, so vector position 0 is map 0's window top-left corner.
    """
    m, h, w = stack.shape
    pad = window // 2
    mp = np.pad(stack, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(mp, (window, window), axis=(1, 2))
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, m * window * window)


def _d4_stack(path_maps: dict[str, np.ndarray], fp: FeaturePipeline) -> np.ndarray:
    res4 = pyramid_resolution(4, fp.config.resolution)
    return np.stack([upsample_to(path_maps[name], res4) for name in ENSEMBLE_ORDER])


def fit_ensemble(fp: FeaturePipeline, heads: PathHeads, gt_pyramids, cfg: Config,
                 sets_for, n_images: int, timings=None) -> EnsembleHead:
    """Fit the fusion regressor on stacked path-map neighborhoods."""
    t0 = time.perf_counter()
    rows = []
    tgts = []
    for i in range(n_images):
        sets = sets_for(i)
        path_maps, _ = predict_paths(sets, heads)
        vec = neighborhood_vectors(_d4_stack(path_maps, fp))
        pix = sample_pixels(
            vec.shape[0], pixel_fraction(cfg, 4), (cfg.seed, _PIXEL_SALT, i, 4)
        )
        rows.append(vec[pix])
        tgts.append(gt_pyramids[i][4].ravel()[pix])
    x = np.concatenate(rows)
    y = np.concatenate(tgts)
    model = gbt_fit(x, y, _gbt_config(cfg, "ensemble"))
    if timings is not None:
        timings.append(("ensemble head", time.perf_counter() - t0))
    return EnsembleHead(model=model)


def fuse_maps(path_maps: dict[str, np.ndarray], head: EnsembleHead,
              fp: FeaturePipeline) -> np.ndarray:
    stack = _d4_stack(path_maps, fp)
    vec = neighborhood_vectors(stack, head.window)
    return gbt_predict(head.model, vec).reshape(stack.shape[1:])


def post_process(map2d: np.ndarray, pp: PostProcessConfig, out_hw: tuple[int, int]) -> np.ndarray:
    """Upsample, floor at a quantile, blur, then min-max normalize.

    Values below the ``floor_quantile`` quantile are raised to it, which after
    normalization zeroes them out; a constant result maps to all zeros.
    """
    up = upsample_to(np.asarray(map2d, dtype=np.float64), out_hw)
    if pp.floor_quantile > 0.0:
        floor = np.quantile(up, pp.floor_quantile, method="higher")
        up = np.maximum(up, floor)
    blurred = gaussian_blur(up, pp.blur_kernel_side, pp.blur_sigma)
    lo = blurred.min()
    span = blurred.max() - lo
    if span <= 0.0:
        return np.zeros_like(blurred)
    return (blurred - lo) / span


def predict_saliency(model: SaliencyModel, image) -> np.ndarray:
    """Full-resolution saliency map for one image (tensor or pyramid)."""
    sets = extract_feature_sets(image, model.pipeline)
    path_maps, _ = predict_paths(sets, model.heads)
    fused = fuse_maps(path_maps, model.ensemble, model.pipeline)
    return post_process(fused, model.postproc, model.config.resolution)


def per_path_maps(model: SaliencyModel, image) -> dict[str, np.ndarray]:
    """Full-resolution post-processed maps for every path and the ensemble."""
    sets = extract_feature_sets(image, model.pipeline)
    path_maps, raw = predict_paths(sets, model.heads)
    out_hw = model.config.resolution
    pp = model.postproc
    out = {name: post_process(raw[name], pp, out_hw) for name in SET_NAMES}
    out["d32+rp"] = post_process(path_maps["d32"], pp, out_hw)
    out["d64+rp"] = post_process(path_maps["d64"], pp, out_hw)
    fused = fuse_maps(path_maps, model.ensemble, model.pipeline)
    out["ensemble"] = post_process(fused, pp, out_hw)
    return out
