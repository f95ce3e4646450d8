"""Multi-layer hybrid feature extraction.

Two cascades of patch transforms (3x3 and 5x5 kernels) run over a five-level
image pyramid (factors 4, 8, 16, 32, 64). Each level's coefficients feed the
next level after supervised channel selection and 2x pooling; the first level
forwards everything and the last forwards nothing. Levels 8/16/32 add a
spatial stack (local texture, edges, center prior). A layer's hybrid
features are [spatial | 3x3 coefficients | 5x5 coefficients]; four feature
sets pair the hybrids of adjacent layers at the deeper layer's resolution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .errors import FitError, ModelError
from .imaging import build_pyramid, downsample2, pyramid_resolution
from .rft import RftResult, rft_rank
from .saab import SaabConfig, SaabKernelSet, apply_saab, fit_saab
from .spatial import (
    EdgeConfig,
    LocalSaabStages,
    fit_local_saab,
    spatial_feature_stack,
)

PATHS = (3, 5)
LAYERS = (4, 8, 16, 32, 64)
SET_NAMES = ("d8", "d16", "d32", "d64")
SET_FACTOR = {"d8": 8, "d16": 16, "d32": 32, "d64": 64}
_PREV = {8: 4, 16: 8, 32: 16, 64: 32}
_SPATIAL_LAYERS = (8, 16, 32)

_PIXEL_SALT = 0x9137


@dataclass(frozen=True)
class StageShape:
    factor: int
    side: int
    in_channels: int
    out_channels: int
    forward_keep: int  # channels handed to the next stage (0 at the last)
    resolution: tuple[int, int]
    source: str  # where this stage's input comes from


@dataclass
class PipelinePlan:
    stages: list[StageShape]
    hybrid_channels: dict[int, int]
    set_channels: dict[str, int]
    set_resolution: dict[str, tuple[int, int]]
    set_labels: dict[str, list[str]] = field(repr=False)


def _forward_cfg(cfg: Config, factor: int) -> int:
    return {
        8: cfg.forward_keep_d8,
        16: cfg.forward_keep_d16,
        32: cfg.forward_keep_d32,
    }.get(factor, 0)


def pixel_fraction(cfg: Config, factor: int) -> float:
    return {
        4: cfg.pixel_fraction_d4,
        8: cfg.pixel_fraction_d8,
        16: cfg.pixel_fraction_d16,
        32: cfg.pixel_fraction_d32,
        64: cfg.pixel_fraction_d64,
    }[factor]


def sample_pixels(n: int, fraction: float, key: tuple) -> np.ndarray:
    """Sorted sample of pixel indices; the full range when fraction == 1."""
    if fraction >= 1.0:
        return np.arange(n)
    take = max(1, int(round(n * fraction)))
    rng = np.random.default_rng(np.random.SeedSequence(key))
    return np.sort(rng.choice(n, size=take, replace=False))


def _saab_labels(factor: int, side: int, n: int) -> list[str]:
    return [
        f"d{factor}.saab{side}.dc" if i == 0 else f"d{factor}.saab{side}.ac{i:03d}"
        for i in range(n)
    ]


def _build_plan(cfg: Config, stage_out, spatial_out, forward_out) -> PipelinePlan:
    """Assemble the shape table from per-stage channel callbacks."""
    res = {f: pyramid_resolution(f, cfg.resolution) for f in LAYERS}
    stages: list[StageShape] = []
    out_ch: dict[tuple[int, int], int] = {}
    for side in PATHS:
        carry = 3
        source = "image.d4"
        for f in LAYERS:
            out = stage_out(f, side, carry)
            if f == 4:
                keep = out
            elif f == 64:
                keep = 0
            else:
                keep = forward_out(f, side, out)
            stages.append(StageShape(f, side, carry, out, keep, res[f], source))
            out_ch[(f, side)] = out
            source = f"d{f}.saab{side}"
            carry = keep
    hybrid: dict[int, int] = {}
    hybrid_labels: dict[int, list[str]] = {}
    for f in LAYERS:
        labels: list[str] = []
        n = 0
        if f in _SPATIAL_LAYERS:
            n_local = spatial_out(f)
            labels += [f"d{f}.local{i:02d}" for i in range(n_local)]
            labels += [f"d{f}.edge", f"d{f}.prior"]
            n += n_local + 2
        for side in PATHS:
            labels += _saab_labels(f, side, out_ch[(f, side)])
            n += out_ch[(f, side)]
        hybrid[f] = n
        hybrid_labels[f] = labels
    set_channels: dict[str, int] = {}
    set_resolution: dict[str, tuple[int, int]] = {}
    set_labels: dict[str, list[str]] = {}
    for name in SET_NAMES:
        f = SET_FACTOR[name]
        p = _PREV[f]
        set_channels[name] = hybrid[p] + hybrid[f]
        set_resolution[name] = res[f]
        set_labels[name] = [f"pool({lab})" for lab in hybrid_labels[p]] + hybrid_labels[f]
    return PipelinePlan(stages, hybrid, set_channels, set_resolution, set_labels)


def plan_shapes(cfg: Config) -> PipelinePlan:
    """Static shape plan assuming full-rank fits (upper bound on channels)."""

    def stage_out(f, side, carry):
        full = side * side * carry
        return full if cfg.saab_channel_cap == 0 else min(full, cfg.saab_channel_cap)

    def spatial_out(f):
        return cfg.local_saab_keep2

    def forward_out(f, side, out):
        keep = _forward_cfg(cfg, f)
        return out if keep == 0 else min(keep, out)

    return _build_plan(cfg, stage_out, spatial_out, forward_out)


@dataclass
class FeaturePipeline:
    config: Config
    saab: dict[tuple[int, int], SaabKernelSet]
    forward_rft: dict[tuple[int, int], RftResult]
    spatial: dict[int, LocalSaabStages]
    plan: PipelinePlan

    def forward_indices(self, factor: int, side: int) -> np.ndarray:
        """Selected channels in their original coefficient order."""
        return np.sort(self.forward_rft[(factor, side)].selected)


def _plan_from_fitted(cfg, saab, forward_rft, spatial) -> PipelinePlan:
    def stage_out(f, side, carry):
        return saab[(f, side)].n_channels

    def spatial_out(f):
        return spatial[f].stage2.n_channels

    def forward_out(f, side, out):
        return int(forward_rft[(f, side)].selected.size)

    return _build_plan(cfg, stage_out, spatial_out, forward_out)


def _stage_seed(seed: int, factor: int, side: int) -> int:
    return seed * 1000 + factor * 10 + side


def fit_feature_pipeline(pyramids, gt_pyramids, cfg: Config, timings=None) -> FeaturePipeline:
    """Fit both cascades, forwarding selections, and spatial stages.

    ``pyramids`` and ``gt_pyramids`` are per-image dicts keyed by pyramid
    factor (see :func:`salmap.imaging.build_pyramid`). Selections are ranked
    against the ground truth pooled to each layer's resolution, on the
    per-layer pixel sample.
    """
    cfg.validate()
    pyramids = list(pyramids)
    gt_pyramids = list(gt_pyramids)
    n = len(pyramids)
    if n < 2:
        raise FitError(f"need at least 2 training images, got {n}")
    if len(gt_pyramids) != n:
        raise FitError("image and ground-truth counts differ")
    res4 = pyramid_resolution(4, cfg.resolution)
    for pyr in pyramids:
        if tuple(pyr[4].shape[:2]) != res4:
            raise FitError(f"pyramid level 4 is {pyr[4].shape[:2]}, expected {res4}")

    def clock(name, start):
        if timings is not None:
            timings.append((name, time.perf_counter() - start))

    saab: dict[tuple[int, int], SaabKernelSet] = {}
    forward_rft: dict[tuple[int, int], RftResult] = {}
    spatial: dict[int, LocalSaabStages] = {}

    carries: dict[int, list[np.ndarray]] = {}
    for side in PATHS:
        t0 = time.perf_counter()
        saab[(4, side)] = fit_saab(
            [p[4] for p in pyramids],
            SaabConfig(
                kernel_side=side,
                max_kept_channels=cfg.saab_channel_cap,
                patch_cap=cfg.saab_patch_cap,
                seed=_stage_seed(cfg.seed, 4, side),
            ),
        )
        carries[side] = [downsample2(apply_saab(p[4], saab[(4, side)])) for p in pyramids]
        clock(f"saab d4 {side}x{side}", t0)

    for f in LAYERS[1:]:
        for side in PATHS:
            t0 = time.perf_counter()
            ks = fit_saab(
                carries[side],
                SaabConfig(
                    kernel_side=side,
                    max_kept_channels=cfg.saab_channel_cap,
                    patch_cap=cfg.saab_patch_cap,
                    seed=_stage_seed(cfg.seed, f, side),
                ),
            )
            saab[(f, side)] = ks
            clock(f"saab d{f} {side}x{side}", t0)
        if f == 64:
            break
        for side in PATHS:
            t0 = time.perf_counter()
            ks = saab[(f, side)]
            rows = []
            tgts = []
            for i, carry in enumerate(carries[side]):
                coeffs = apply_saab(carry, ks)
                n_pix = coeffs.shape[0] * coeffs.shape[1]
                pix = sample_pixels(
                    n_pix, pixel_fraction(cfg, f), (cfg.seed, _PIXEL_SALT, i, f)
                )
                rows.append(coeffs.reshape(n_pix, -1)[pix])
                tgts.append(gt_pyramids[i][f].ravel()[pix])
            ranked = rft_rank(np.concatenate(rows), np.concatenate(tgts), cfg.rft_bins)
            keep_cfg = _forward_cfg(cfg, f)
            keep = ranked.ranking.size if keep_cfg == 0 else min(keep_cfg, ranked.ranking.size)
            ranked = ranked.with_selected(keep)
            forward_rft[(f, side)] = ranked
            sel = np.sort(ranked.selected)
            carries[side] = [
                downsample2(apply_saab(c, ks)[:, :, sel]) for c in carries[side]
            ]
            clock(f"forward rft d{f} {side}x{side}", t0)

    for f in _SPATIAL_LAYERS:
        t0 = time.perf_counter()
        spatial[f] = fit_local_saab(
            [p[f] for p in pyramids],
            cfg.local_saab_keep1,
            cfg.local_saab_keep2,
            seed=_stage_seed(cfg.seed, f, 7),
        )
        clock(f"spatial d{f}", t0)

    plan = _plan_from_fitted(cfg, saab, forward_rft, spatial)
    return FeaturePipeline(
        config=cfg, saab=saab, forward_rft=forward_rft, spatial=spatial, plan=plan
    )


def extract_feature_sets(image, fp: FeaturePipeline) -> dict[str, np.ndarray]:
    """Compute the four feature sets for one image (tensor or prebuilt pyramid)."""
    if fp is None or not fp.saab:
        raise ModelError("feature pipeline is not fitted")
    cfg = fp.config
    pyr = image if isinstance(image, dict) else build_pyramid(np.asarray(image, dtype=np.float64))
    res4 = pyramid_resolution(4, cfg.resolution)
    if tuple(pyr[4].shape[:2]) != res4:
        raise ValueError(f"pyramid level 4 is {pyr[4].shape[:2]}, expected {res4}")

    coeffs: dict[tuple[int, int], np.ndarray] = {}
    for side in PATHS:
        carry = pyr[4]
        for f in LAYERS:
            c = apply_saab(carry, fp.saab[(f, side)])
            coeffs[(f, side)] = c
            if f == 64:
                break
            forwarded = c if f == 4 else c[:, :, fp.forward_indices(f, side)]
            carry = downsample2(forwarded)

    edge_cfg = EdgeConfig(
        low_threshold=cfg.edge_low_threshold,
        high_threshold=cfg.edge_high_threshold,
        smoothing_sigma=cfg.edge_smoothing_sigma,
    )
    hybrids: dict[int, np.ndarray] = {}
    for f in LAYERS:
        parts = []
        if f in _SPATIAL_LAYERS:
            h, w = pyr[f].shape[:2]
            sigma = min(h, w) * cfg.center_sigma_fraction
            parts.append(
                spatial_feature_stack(pyr[f], fp.spatial[f], edge_cfg, sigma, (h, w))
            )
        parts.append(coeffs[(f, 3)])
        parts.append(coeffs[(f, 5)])
        hybrids[f] = np.concatenate(parts, axis=2)

    sets: dict[str, np.ndarray] = {}
    for name in SET_NAMES:
        f = SET_FACTOR[name]
        pooled = downsample2(hybrids[_PREV[f]])
        sets[name] = np.concatenate([pooled, hybrids[f]], axis=2)
        if sets[name].shape[2] != fp.plan.set_channels[name]:
            raise ModelError(
                f"set {name} produced {sets[name].shape[2]} channels, "
                f"plan says {fp.plan.set_channels[name]}"
            )
    return sets
