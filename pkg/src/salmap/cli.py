"""Command-line interface: train, predict, evaluate, inspect.

Exit codes: 0 success, 2 usage, 3 data problems, 4 model problems. Errors
print one line to stderr as ``salmap: error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bundle import load_bundle, save_bundle
from .config import config_to_text, load_config
from .dataset import entry_fixation_map, ingest_dataset, load_entry_image, load_gt_map
from .errors import DataError, ModelError
from .gbt import dump_trees
from .imaging import load_and_normalize, save_gray_png
from .metrics import METRIC_NAMES, MetricReport, evaluate_prediction
from .prediction import per_path_maps, predict_saliency
from .train import collect_rft_curves, format_rft_curves, format_shape_table, train_model

PATH_VARIANTS = ("d8", "d16", "d32", "d32+rp", "d64", "d64+rp", "ensemble")

_WORKER_MODEL = None


def _init_worker(model):
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _timed_predict(img):
    t0 = time.perf_counter()
    out = predict_saliency(_WORKER_MODEL, img)
    return out, time.perf_counter() - t0


def _predict_many(model, images, jobs: int):
    """Saliency maps with per-image seconds, optionally across processes."""
    if jobs > 1 and hasattr(os, "fork"):
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(model,)) as pool:
            return pool.map(_timed_predict, images)
    _init_worker(model)
    return [_timed_predict(img) for img in images]


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    try:
        cfg.validate()
    except ValueError as exc:
        raise DataError(str(exc)) from exc

    progress = None if args.quiet else lambda msg: print(f"  {msg}", file=sys.stderr)
    bundle, log = train_model(args.data, cfg, progress=progress)
    save_bundle(bundle, args.out)
    log_path = args.log or f"{args.out}.log"
    Path(log_path).write_text(log, encoding="utf-8")
    size = os.path.getsize(args.out)
    print(f"wrote {args.out} ({size / 1e6:.2f} MB), log at {log_path}")
    return 0


def _cmd_predict(args) -> int:
    bundle = load_bundle(args.model)
    model = bundle.model
    res = model.config.resolution
    os.makedirs(args.out, exist_ok=True)
    images = [load_and_normalize(p, res) for p in args.images]
    stems = [Path(p).stem for p in args.images]
    if args.per_path:
        for stem, img in zip(stems, images):
            t0 = time.perf_counter()
            maps = per_path_maps(model, img)
            dt = time.perf_counter() - t0
            for key, map01 in maps.items():
                save_gray_png(map01, Path(args.out) / f"{stem}.{key}.png")
            save_gray_png(maps["ensemble"], Path(args.out) / f"{stem}.png")
            print(f"{stem}: {dt:.3f}s ({len(maps)} maps)")
        return 0
    for stem, (map01, dt) in zip(stems, _predict_many(model, images, args.jobs)):
        save_gray_png(map01, Path(args.out) / f"{stem}.png")
        print(f"{stem}: {dt:.3f}s")
    return 0


def _split_entries(manifest_path, split: str):
    manifest = ingest_dataset(manifest_path)
    entries = manifest.split_entries(split)
    if not entries:
        raise DataError(f"{manifest.path}: no entries in split {split!r}")
    if len(entries) < 2:
        raise DataError(
            f"{manifest.path}: split {split!r} needs >= 2 entries for shuffled AUC"
        )
    return entries


def _cmd_evaluate(args) -> int:
    bundle = load_bundle(args.model)
    model = bundle.model
    cfg = model.config
    res = cfg.resolution
    entries = _split_entries(args.data, args.split)
    fmaps = [entry_fixation_map(e, res) for e in entries]
    images = [load_entry_image(e, res) for e in entries]
    preds = _predict_many(model, images, args.jobs)
    report = MetricReport()
    for i, entry in enumerate(entries):
        gt = load_gt_map(entry.gt, res)
        others = [fm for j, fm in enumerate(fmaps) if j != i]
        values = evaluate_prediction(preds[i][0], gt, fmaps[i], others, seed=cfg.seed)
        report.add(entry.name, values)
    csv_text = report.to_csv()
    means = report.means()
    summary = "mean " + " ".join(f"{k}={means[k]:.4f}" for k in METRIC_NAMES)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(summary)
    else:
        sys.stdout.write(csv_text)
        print(summary, file=sys.stderr)
    return 0


def _per_path_table(model, entries) -> str:
    cfg = model.config
    res = cfg.resolution
    fmaps = [entry_fixation_map(e, res) for e in entries]
    sums = {v: {k: 0.0 for k in METRIC_NAMES} for v in PATH_VARIANTS}
    for i, entry in enumerate(entries):
        img = load_entry_image(entry, res)
        gt = load_gt_map(entry.gt, res)
        others = [fm for j, fm in enumerate(fmaps) if j != i]
        maps = per_path_maps(model, img)
        for variant in PATH_VARIANTS:
            values = evaluate_prediction(
                maps[variant], gt, fmaps[i], others, seed=cfg.seed
            )
            for k in METRIC_NAMES:
                sums[variant][k] += values[k]
    n = len(entries)
    lines = ["  path      " + "  ".join(f"{k:>7s}" for k in METRIC_NAMES)]
    for variant in PATH_VARIANTS:
        row = "  ".join(f"{sums[variant][k] / n:7.4f}" for k in METRIC_NAMES)
        lines.append(f"  {variant:<9s} {row}")
    return "\n".join(lines)


def _cmd_inspect(args) -> int:
    bundle = load_bundle(args.model)
    model = bundle.model
    meta = bundle.meta
    shown = False
    if args.shapes:
        print("cascade shapes")
        print(format_shape_table(model.pipeline.plan))
        shown = True
    if args.rft_curves:
        print("selection curves")
        print(format_rft_curves(collect_rft_curves(model)))
        shown = True
    if args.trees:
        heads = model.heads
        sections = [(f"map {n}", heads.map_heads[n]) for n in sorted(heads.map_heads)]
        sections += [
            (f"residual {n}", heads.residual_heads[n])
            for n in sorted(heads.residual_heads)
        ]
        for label, head in sections:
            print(f"== {label} ==")
            print(dump_trees(head.model, args.trees))
        print("== ensemble ==")
        print(dump_trees(model.ensemble.model, args.trees))
        shown = True
    if args.per_path:
        if not args.data:
            raise ValueError("--per-path needs --data")
        entries = _split_entries(args.data, args.split)
        print(f"per-path metrics on split {args.split!r} ({len(entries)} images)")
        print(_per_path_table(model, entries))
        shown = True
    if not shown:
        print(f"bundle format {bundle.format_version}")
        print(
            f"trained on {meta.dataset_name!r}: {meta.image_count} images,"
            f" seed {meta.seed}, manifest stamp {meta.timestamp}"
        )
        plan = model.pipeline.plan
        ch = ", ".join(f"{k}={plan.set_channels[k]}" for k in ("d8", "d16", "d32", "d64"))
        print(f"feature channels: {ch}")
        print()
        print(config_to_text(model.config), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salmap", description="image saliency prediction toolkit"
    )
    parser.add_argument("--version", action="version", version=f"salmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a dataset manifest")
    p.add_argument("--data", required=True, help="manifest.tsv path")
    p.add_argument("--out", required=True, help="output bundle path")
    p.add_argument("--config", default=None, help="config text file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--cache-dir", default=None, help="feature cache directory")
    p.add_argument("--log", default=None, help="training log path (default OUT.log)")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write saliency maps for image files")
    p.add_argument("--model", required=True, help="trained bundle path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--per-path", action="store_true", help="also write per-path maps")
    p.add_argument("images", nargs="+", help="input image files")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a model against a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="manifest.tsv path")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("inspect", help="describe a trained bundle")
    p.add_argument("--model", required=True)
    p.add_argument("--shapes", action="store_true", help="print the cascade shape table")
    p.add_argument("--rft-curves", action="store_true", help="print selection curves")
    p.add_argument("--trees", type=int, default=0, help="dump the first N trees per head")
    p.add_argument("--per-path", action="store_true", help="evaluate each path separately")
    p.add_argument("--data", default=None, help="manifest for --per-path")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"salmap: error: data: {exc}", file=sys.stderr)
        return 3
    except ModelError as exc:
        print(f"salmap: error: model: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"salmap: error: usage: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
