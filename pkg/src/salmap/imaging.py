"""Image decoding, color conversion, pooling, resizing, and blur primitives.

Everything operates on channel-last float64 arrays: ``(H, W)`` for a single
plane or ``(H, W, C)`` for a stack. Loading normalizes to the fixed working
resolution and converts to full-range BT.601 YUV with all channels in [0, 1].
"""

from __future__ import annotations

import os
import tempfile

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

BASE_RESOLUTION = (480, 640)
PYRAMID_FACTORS = (4, 8, 16, 32, 64)

# Full-range BT.601 RGB -> YUV; chroma offset 0.5 keeps channels in [0, 1].
_RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV_OFFSET = np.array([0.0, 0.5, 0.5])


def pyramid_resolution(factor: int, base: tuple[int, int] = BASE_RESOLUTION) -> tuple[int, int]:
    """Resolution of the pyramid level ``factor``, derived by repeated halving.

    Odd dimensions round up because :func:`downsample2` replicate-pads before
    pooling, e.g. 15 -> 8.
    """
    if factor not in PYRAMID_FACTORS:
        raise ValueError(f"unknown pyramid factor {factor}")
    h, w = base
    steps = int(factor).bit_length() - 1
    for _ in range(steps):
        h = (h + 1) // 2
        w = (w + 1) // 2
    return h, w


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) RGB array in [0, 1] to full-range YUV in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got {rgb.shape}")
    return rgb @ _RGB_TO_YUV.T + _YUV_OFFSET


def load_and_normalize(path, size: tuple[int, int] = BASE_RESOLUTION) -> np.ndarray:
    """Decode an image file, resize to ``size``, and return its YUV tensor."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.width == 0 or im.height == 0:
                raise DataError(f"{path}: image has a zero dimension")
            if (im.height, im.width) != size:
                im = im.resize((size[1], size[0]), Image.Resampling.BILINEAR)
            rgb = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return rgb_to_yuv(rgb)


def downsample2(t: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; odd dims replicate-pad the far edge."""
    x = np.asarray(t, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("need at least a 2-D array")
    if x.shape[0] % 2:
        x = np.concatenate([x, x[-1:]], axis=0)
    if x.shape[1] % 2:
        x = np.concatenate([x, x[:, -1:]], axis=1)
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def build_pyramid(img: np.ndarray) -> dict[int, np.ndarray]:
    """All pyramid levels of a full-resolution tensor, keyed by factor."""
    levels: dict[int, np.ndarray] = {}
    cur = downsample2(downsample2(img))
    levels[4] = cur
    for factor in PYRAMID_FACTORS[1:]:
        cur = downsample2(cur)
        levels[factor] = cur
    return levels


def _lin_indices(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_src == 1:
        z = np.zeros(n_dst, dtype=np.int64)
        return z, z, np.zeros(n_dst)
    pos = np.linspace(0.0, n_src - 1.0, n_dst)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, n_src - 2)
    return lo, lo + 1, pos - lo


def upsample_to(t: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling with corner alignment.

    Grid corners map onto grid corners, so a target grid whose step divides
    the source grid reproduces source values exactly. Target dims must be >=
    source dims.
    """
    x = np.asarray(t, dtype=np.float64)
    th, tw = target
    h, w = x.shape[:2]
    if th < h or tw < w:
        raise ValueError(f"target {target} smaller than source {(h, w)}")
    ylo, yhi, wy = _lin_indices(h, th)
    xlo, xhi, wx = _lin_indices(w, tw)
    tail = (1,) * (x.ndim - 2)
    wy = wy.reshape(-1, 1, *tail)
    rows = x[ylo] * (1.0 - wy) + x[yhi] * wy
    wx = wx.reshape(1, -1, *tail)
    return rows[:, xlo] * (1.0 - wx) + rows[:, xhi] * wx


def _blur_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    k = taps.size
    lo = k // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (lo, k - 1 - lo)
    xp = np.pad(x, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=axis)
    return win @ taps


def gaussian_kernel(kernel_side: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps; even sides center between the two middle taps."""
    if kernel_side < 1:
        raise ValueError("kernel_side must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    offsets = np.arange(kernel_side) - (kernel_side - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(t: np.ndarray, kernel_side: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate borders; kernel sums to one."""
    x = np.asarray(t, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("need at least a 2-D array")
    taps = gaussian_kernel(kernel_side, sigma)
    out = _blur_axis(x, taps, 0)
    return _blur_axis(out, taps, 1)


def save_gray_png(map01: np.ndarray, path) -> None:
    """Write a [0, 1] map as an 8-bit grayscale PNG (atomic replace)."""
    arr = np.asarray(map01, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D map")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            Image.fromarray(data, mode="L").save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
