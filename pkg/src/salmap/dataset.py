"""Dataset manifests and fixation/ground-truth loading.

A manifest is a UTF-8 text file with one tab-separated record per line:

    image_relpath<TAB>gt_relpath<TAB>fixations_relpath<TAB>split

Relative paths resolve against the manifest's directory; split is one of
train/val/test. Fixation files hold one ``x y`` integer pair per line in the
original image's coordinate system. Ingestion validates existence, syntax,
and coordinate bounds up front, reporting file and line numbers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .imaging import load_and_normalize
from .metrics import FixationMap

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    gt: Path
    fixations: Path
    split: str
    image_size: tuple[int, int]  # (width, height) of the original image

    @property
    def name(self) -> str:
        return self.image.stem


@dataclass
class DatasetManifest:
    path: Path
    entries: list[ManifestEntry]

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]


def _probe_image_size(path: Path, where: str) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{where}: cannot read image {path}: {exc}") from exc


def load_fixation_points(path: Path, bounds: tuple[int, int] | None = None) -> np.ndarray:
    """Parse ``x y`` lines into an (N, 2) int array, checking bounds if given."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read fixations {path}: {exc}") from exc
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        try:
            x, y = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer coordinate in {line!r}") from exc
        if bounds is not None:
            w, h = bounds
            if not (0 <= x < w and 0 <= y < h):
                raise DataError(
                    f"{path}:{lineno}: fixation ({x}, {y}) out of bounds for {w}x{h} image"
                )
        points.append((x, y))
    return np.asarray(points, dtype=np.int64).reshape(-1, 2)


def ingest_dataset(manifest_path) -> DatasetManifest:
    """Read and fully validate a dataset manifest."""
    mpath = Path(manifest_path)
    try:
        text = mpath.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {mpath}: {exc}") from exc
    root = mpath.parent
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 4:
            raise DataError(
                f"{mpath}:{lineno}: expected 4 tab-separated fields, got {len(fields)}"
            )
        img_rel, gt_rel, fix_rel, split = (f.strip() for f in fields)
        if split not in SPLITS:
            raise DataError(f"{mpath}:{lineno}: unknown split {split!r}")
        img = root / img_rel
        gt = root / gt_rel
        fix = root / fix_rel
        for p in (img, gt, fix):
            if not os.path.isfile(p):
                raise DataError(f"{mpath}:{lineno}: missing file {p}")
        size = _probe_image_size(img, f"{mpath}:{lineno}")
        load_fixation_points(fix, bounds=size)
        entries.append(
            ManifestEntry(image=img, gt=gt, fixations=fix, split=split, image_size=size)
        )
    if not entries:
        raise DataError(f"{mpath}: no entries")
    return DatasetManifest(path=mpath, entries=entries)


def load_gt_map(path, size: tuple[int, int]) -> np.ndarray:
    """Load a grayscale ground-truth map, resized to ``size``, in [0, 1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if (im.height, im.width) != size:
                im = im.resize((size[1], size[0]), Image.Resampling.BILINEAR)
            return np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode ground truth {path}: {exc}") from exc


def entry_fixation_map(entry: ManifestEntry, size: tuple[int, int]) -> FixationMap:
    """Entry's fixations rescaled from original coordinates to ``size``."""
    points = load_fixation_points(entry.fixations, bounds=entry.image_size)
    w, h = entry.image_size
    native = FixationMap(height=h, width=w, points=points)
    return native.rescaled(size[0], size[1])


def load_entry_image(entry: ManifestEntry, size: tuple[int, int]) -> np.ndarray:
    return load_and_normalize(entry.image, size)
