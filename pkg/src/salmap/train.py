"""End-to-end model training and the human-readable training log."""

from __future__ import annotations

import os
import time

from .bundle import ModelBundle, TrainingMeta
from .config import Config
from .dataset import DatasetManifest, ingest_dataset, load_entry_image, load_gt_map
from .errors import DataError
from .imaging import build_pyramid
from .pipeline import FeaturePipeline, PipelinePlan, fit_feature_pipeline
from .prediction import (
    PostProcessConfig,
    SaliencyModel,
    SetProvider,
    fit_ensemble,
    fit_paths,
)
from .rft import RftResult


def _dataset_name(manifest_path) -> str:
    path = os.path.abspath(os.fspath(manifest_path))
    parent = os.path.basename(os.path.dirname(path))
    return parent or os.path.splitext(os.path.basename(path))[0]


def load_training_pyramids(entries, cfg: Config):
    """Image and ground-truth pyramids for every manifest entry, in order."""
    pyramids = []
    gt_pyramids = []
    for entry in entries:
        img = load_entry_image(entry, cfg.resolution)
        pyramids.append(build_pyramid(img))
        gt = load_gt_map(entry.gt, cfg.resolution)
        gt_pyramids.append(build_pyramid(gt))
    return pyramids, gt_pyramids


def format_shape_table(plan: PipelinePlan) -> str:
    lines = ["  layer  path  in   out  fwd  resolution  source"]
    for st in plan.stages:
        res = f"{st.resolution[0]}x{st.resolution[1]}"
        lines.append(
            f"  d{st.factor:<5d} {st.side}x{st.side}  {st.in_channels:<4d}"
            f" {st.out_channels:<4d} {st.forward_keep:<4d} {res:<11s} {st.source}"
        )
    lines.append("")
    lines.append("  set   channels  resolution")
    for name in ("d8", "d16", "d32", "d64"):
        res = plan.set_resolution[name]
        lines.append(
            f"  {name:<5s} {plan.set_channels[name]:<9d} {res[0]}x{res[1]}"
        )
    return "\n".join(lines)


def format_rft_curves(curves: dict[str, RftResult], top: int = 8) -> str:
    """Best R_op scores per selection stage, lowest (best) first."""
    lines = []
    for name in sorted(curves):
        res = curves[name]
        k = min(top, res.ranking.size)
        best = res.r_op[res.ranking[:k]]
        scores = " ".join(f"{v:.5f}" for v in best)
        kept = res.selected.size if res.selected.size else res.ranking.size
        lines.append(
            f"  {name}: kept {kept}/{res.ranking.size},"
            f" target var {res.target_variance:.5f}, best {scores}"
        )
    return "\n".join(lines)


def collect_rft_curves(model: SaliencyModel) -> dict[str, RftResult]:
    curves: dict[str, RftResult] = {}
    for (factor, side), res in model.pipeline.forward_rft.items():
        curves[f"forward d{factor} {side}x{side}"] = res
    for name, head in model.heads.map_heads.items():
        curves[f"map {name}"] = head.rft
    for name, head in model.heads.residual_heads.items():
        curves[f"residual {name}"] = head.rft
    return curves


def format_training_log(bundle: ModelBundle, timings, wall_seconds: float) -> str:
    cfg = bundle.config
    plan = bundle.model.pipeline.plan
    lines = [
        "training log",
        "============",
        f"dataset: {bundle.meta.dataset_name} ({bundle.meta.image_count} train images)",
        f"seed: {bundle.meta.seed}",
        f"working resolution: {cfg.image_height}x{cfg.image_width}",
        f"wall time: {wall_seconds:.1f}s",
        "",
        "stage timings (s)",
    ]
    for name, seconds in timings:
        pad = "." * max(1, 28 - len(name))
        lines.append(f"  {name} {pad} {seconds:.2f}")
    lines += ["", "cascade shapes", format_shape_table(plan)]
    curves = collect_rft_curves(bundle.model)
    lines += ["", "selection curves", format_rft_curves(curves)]
    lines.append("")
    return "\n".join(lines)


def train_model(manifest_path, cfg: Config, progress=None) -> tuple[ModelBundle, str]:
    """Train a full saliency model from a dataset manifest.

    Returns the bundle and the formatted training log. ``progress`` is an
    optional callable taking one status line per phase.
    """

    def say(msg: str):
        if progress is not None:
            progress(msg)

    cfg.validate()
    wall0 = time.perf_counter()
    manifest: DatasetManifest = ingest_dataset(manifest_path)
    entries = manifest.split_entries("train")
    if len(entries) < 2:
        raise DataError(
            f"{manifest.path}: need at least 2 train entries, got {len(entries)}"
        )
    timings: list[tuple[str, float]] = []

    say(f"loading {len(entries)} training images")
    t0 = time.perf_counter()
    pyramids, gt_pyramids = load_training_pyramids(entries, cfg)
    timings.append(("load + pyramids", time.perf_counter() - t0))

    say("fitting feature pipeline")
    fp: FeaturePipeline = fit_feature_pipeline(pyramids, gt_pyramids, cfg, timings)

    sets_for = SetProvider(pyramids, fp, cfg.cache_dir)
    say("fitting prediction heads")
    heads = fit_paths(fp, gt_pyramids, cfg, sets_for, len(entries), timings)
    say("fitting ensemble")
    ensemble = fit_ensemble(fp, heads, gt_pyramids, cfg, sets_for, len(entries), timings)

    model = SaliencyModel(
        pipeline=fp,
        heads=heads,
        ensemble=ensemble,
        postproc=PostProcessConfig(
            floor_quantile=cfg.floor_quantile,
            blur_kernel_side=cfg.blur_kernel_side,
            blur_sigma=cfg.blur_sigma,
        ),
    )
    meta = TrainingMeta(
        dataset_name=_dataset_name(manifest.path),
        image_count=len(entries),
        seed=cfg.seed,
        timestamp=int(os.stat(manifest.path).st_mtime),
    )
    bundle = ModelBundle(model=model, meta=meta)
    log = format_training_log(bundle, timings, time.perf_counter() - wall0)
    say("done")
    return bundle, log
