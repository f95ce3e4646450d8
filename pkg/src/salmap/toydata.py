"""Synthetic saliency dataset generator.

Each scene is a gradient background with one high-contrast salient object and
a few muted distractors. A fixation density mixes object blobs with a center
bias; fixations are sampled from it and the ground-truth map is a blurred
fixation raster. Everything is deterministic in the seed.

Run ``python -m salmap.toydata --out DIR`` to build a dataset with a
``manifest.tsv`` ready for training.
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import gaussian_blur, upsample_to

SALIENT_WEIGHT = 0.6
CENTER_WEIGHT = 0.4
DISTRACTOR_WEIGHT = 0.12


def _blob(height: int, width: int, cy: float, cx: float, sy: float, sx: float) -> np.ndarray:
    y = (np.arange(height) - cy)[:, None] / sy
    x = (np.arange(width) - cx)[None, :] / sx
    return np.exp(-0.5 * (y * y + x * x))


def _fill_shape(img: np.ndarray, mask: np.ndarray, color: np.ndarray):
    img[mask] = color


def _object_mask(height, width, cy, cx, hy, hx, kind: str) -> np.ndarray:
    yy = np.arange(height)[:, None] - cy
    xx = np.arange(width)[None, :] - cx
    if kind == "rect":
        return (np.abs(yy) <= hy) & (np.abs(xx) <= hx)
    return (yy / hy) ** 2 + (xx / hx) ** 2 <= 1.0


def render_scene(height: int, width: int, rng: np.random.Generator):
    """One synthetic scene: (rgb image in [0,1], fixation density)."""
    base = rng.uniform(0.2, 0.4, size=3)
    gy, gx = rng.uniform(-0.12, 0.12, size=2)
    ry = np.linspace(-0.5, 0.5, height)[:, None]
    rx = np.linspace(-0.5, 0.5, width)[None, :]
    ramp = gy * ry + gx * rx
    img = np.clip(base[None, None, :] + ramp[:, :, None], 0.0, 1.0)

    margin_y, margin_x = height // 6, width // 6
    content = np.zeros((height, width))

    # Salient object: bright, large, mildly center-biased placement.
    hy = rng.uniform(0.10, 0.16) * height
    hx = rng.uniform(0.10, 0.16) * width
    cy = np.clip(
        height / 2 + rng.normal(0.0, height / 5), margin_y + hy, height - margin_y - hy
    )
    cx = np.clip(
        width / 2 + rng.normal(0.0, width / 5), margin_x + hx, width - margin_x - hx
    )
    kind = "rect" if rng.random() < 0.5 else "ellipse"
    bright = rng.uniform(0.75, 1.0, size=3)
    bright[rng.integers(0, 3)] = rng.uniform(0.0, 0.2)  # saturated, not white
    _fill_shape(img, _object_mask(height, width, cy, cx, hy, hx, kind), bright)
    content += SALIENT_WEIGHT * _blob(height, width, cy, cx, hy * 0.8, hx * 0.8)

    for _ in range(int(rng.integers(1, 4))):
        dhy = rng.uniform(0.04, 0.08) * height
        dhx = rng.uniform(0.04, 0.08) * width
        dcy = rng.uniform(dhy, height - dhy)
        dcx = rng.uniform(dhx, width - dhx)
        muted = np.clip(base + rng.uniform(-0.15, 0.15, size=3), 0.0, 1.0)
        dkind = "rect" if rng.random() < 0.5 else "ellipse"
        _fill_shape(img, _object_mask(height, width, dcy, dcx, dhy, dhx, dkind), muted)
        content += DISTRACTOR_WEIGHT * _blob(height, width, dcy, dcx, dhy, dhx)

    img = np.clip(img + rng.normal(0.0, 0.01, size=img.shape), 0.0, 1.0)

    sigma = min(height, width) / 4
    center = _blob(height, width, (height - 1) / 2, (width - 1) / 2, sigma, sigma)
    density = content + CENTER_WEIGHT * center
    return img, density / density.sum()


def sample_fixations(density: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """(N, 2) integer (x, y) fixations drawn from the density map."""
    h, w = density.shape
    flat = rng.choice(h * w, size=count, replace=True, p=density.ravel())
    return np.stack([flat % w, flat // w], axis=1).astype(np.int64)


def fixation_gt(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Blurred fixation raster in [0, 1], computed at quarter resolution."""
    qh, qw = (height + 3) // 4, (width + 3) // 4
    raster = np.zeros((qh, qw))
    np.add.at(raster, (points[:, 1] // 4, points[:, 0] // 4), 1.0)
    sigma = min(qh, qw) / 14
    side = 2 * int(np.ceil(3 * sigma)) + 1
    smooth = gaussian_blur(raster, side, sigma)
    full = upsample_to(smooth, (height, width))
    peak = full.max()
    return full / peak if peak > 0 else full


def _save_png(arr01: np.ndarray, path: Path):
    data = np.rint(np.clip(arr01, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def generate_dataset(
    out_dir,
    n_train: int = 60,
    n_test: int = 20,
    n_val: int = 0,
    height: int = 480,
    width: int = 640,
    seed: int = 7,
    fixation_count: int = 90,
) -> Path:
    """Write a full synthetic dataset; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("images", "maps", "fixations"):
        os.makedirs(out / sub, exist_ok=True)
    splits = ["train"] * n_train + ["test"] * n_test + ["val"] * n_val
    lines = []
    for idx, split in enumerate(splits):
        rng = np.random.default_rng(np.random.SeedSequence((seed, idx)))
        img, density = render_scene(height, width, rng)
        count = int(rng.integers(fixation_count - 20, fixation_count + 21))
        points = sample_fixations(density, count, rng)
        gt = fixation_gt(points, height, width)

        name = f"{idx:03d}"
        _save_png(img, out / "images" / f"img_{name}.png")
        _save_png(gt, out / "maps" / f"gt_{name}.png")
        fix_path = out / "fixations" / f"fix_{name}.txt"
        fix_path.write_text(
            "".join(f"{x} {y}\n" for x, y in points), encoding="utf-8"
        )
        lines.append(
            f"images/img_{name}.png\tmaps/gt_{name}.png\t"
            f"fixations/fix_{name}.txt\t{split}\n"
        )
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="salmap.toydata", description="generate a synthetic saliency dataset"
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--train", type=int, default=60)
    parser.add_argument("--test", type=int, default=20)
    parser.add_argument("--val", type=int, default=0)
    parser.add_argument("--height", type=int, default=480)
    parser.add_argument("--width", type=int, default=640)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    manifest = generate_dataset(
        args.out, args.train, args.test, args.val, args.height, args.width, args.seed
    )
    total = args.train + args.test + args.val
    print(f"wrote {total} scenes under {args.out} (manifest: {manifest})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
