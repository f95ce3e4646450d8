"""Per-layer spatial feature maps: local texture, edges, and a center prior.

The stack produced for a layer is, in channel order: a small two-stage patch
transform of the downsampled image (2x2 then 3x3 kernels), a binary edge map
of the luma plane, and a Gaussian center-distance prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .imaging import gaussian_blur
from .saab import SaabConfig, SaabKernelSet, apply_saab, fit_saab


@dataclass(frozen=True)
class EdgeConfig:
    low_threshold: float = 0.1
    high_threshold: float = 0.2
    smoothing_sigma: float = 1.4

    def validate(self) -> None:
        if not 0.0 < self.low_threshold < self.high_threshold:
            raise ValueError("need 0 < low_threshold < high_threshold")
        if self.smoothing_sigma <= 0:
            raise ValueError("smoothing_sigma must be positive")


@dataclass(frozen=True)
class CenterPriorConfig:
    sigma: float
    center: tuple[float, float] | None = None  # (x, y); image center when None


@dataclass
class LocalSaabStages:
    stage1: SaabKernelSet  # 2x2 kernels on the image
    stage2: SaabKernelSet  # 3x3 kernels on stage-1 coefficients


def center_prior(height: int, width: int, cfg: CenterPriorConfig) -> np.ndarray:
    """exp(-((cx - x)^2 + (cy - y)^2) / sigma^2) over the pixel grid."""
    if cfg.sigma <= 0:
        raise ValueError("sigma must be positive")
    cx, cy = cfg.center if cfg.center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    d2 = (cx - xs) ** 2 + (cy - ys) ** 2
    return np.exp(-d2 / (cfg.sigma * cfg.sigma))


def default_prior_sigma(height: int, width: int) -> float:
    return min(height, width) / 3.0


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
_SOBEL_Y = _SOBEL_X.T


def _conv3(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    xp = np.pad(x, 1, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3))
    return np.einsum("ijkl,kl->ij", win, kernel)


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Thin ridges to one pixel along the quantized gradient direction.

    A pixel survives when strictly greater than the neighbor behind it and at
    least equal to the one ahead, so flat two-pixel ridges keep exactly one.
    """
    h, w = mag.shape
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    sector = np.mod(np.rint(angle / (np.pi / 4.0)).astype(np.int64), 4)
    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    ahead = np.empty_like(mag)
    behind = np.empty_like(mag)
    for s, (dy, dx) in offsets.items():
        m = sector == s
        if not m.any():
            continue
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        ahead[m] = fwd[m]
        behind[m] = bwd[m]
    return (mag > behind) & (mag >= ahead) & (mag > 0)


def _dilate8(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, mode="constant")
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return out


def edge_map(luma: np.ndarray, cfg: EdgeConfig = EdgeConfig()) -> np.ndarray:
    """Binary {0, 1} edge map: smooth, Sobel, thin, then hysteresis.

    Sobel responses are scaled so a unit brightness step has gradient
    magnitude about 1, which makes the thresholds meaningful for [0, 1] luma.
    """
    cfg.validate()
    x = np.asarray(luma, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ValueError("edge_map expects a single-channel image")
    side = 2 * math.ceil(3.0 * cfg.smoothing_sigma) + 1
    smoothed = gaussian_blur(x, side, cfg.smoothing_sigma)
    gx = _conv3(smoothed, _SOBEL_X)
    gy = _conv3(smoothed, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    ridge = _nms(mag, gx, gy)
    strong = ridge & (mag >= cfg.high_threshold)
    weak = ridge & (mag >= cfg.low_threshold)
    out = strong
    while True:
        grown = (_dilate8(out) & weak) | out
        if np.array_equal(grown, out):
            break
        out = grown
    return out.astype(np.float64)


def fit_local_saab(images, keep1: int, keep2: int, seed: int = 0) -> LocalSaabStages:
    """Fit the 2x2 then 3x3 cascade on level-resolution images."""
    images = list(images)
    stage1 = fit_saab(images, SaabConfig(kernel_side=2, max_kept_channels=keep1, seed=seed))
    stage1_out = [apply_saab(img, stage1) for img in images]
    stage2 = fit_saab(
        stage1_out, SaabConfig(kernel_side=3, max_kept_channels=keep2, seed=seed + 1)
    )
    return LocalSaabStages(stage1=stage1, stage2=stage2)


def local_saab_features(img: np.ndarray, stages: LocalSaabStages) -> np.ndarray:
    """Apply the fitted cascade; output keeps the input's spatial dims."""
    if stages is None or stages.stage1 is None or stages.stage2 is None:
        raise ModelError("local feature stages are not fitted")
    return apply_saab(apply_saab(img, stages.stage1), stages.stage2)


def spatial_feature_stack(
    img: np.ndarray,
    stages: LocalSaabStages,
    edge_cfg: EdgeConfig,
    prior_sigma: float,
    expected_hw: tuple[int, int] | None = None,
) -> np.ndarray:
    """Concatenate [local texture | edge | center prior] for one level."""
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[:2]
    if expected_hw is not None and (h, w) != tuple(expected_hw):
        raise ValueError(f"image is {(h, w)}, level expects {tuple(expected_hw)}")
    local = local_saab_features(x, stages)
    edges = edge_map(x[:, :, 0] if x.ndim == 3 else x, edge_cfg)
    prior = center_prior(h, w, CenterPriorConfig(sigma=prior_sigma))
    return np.concatenate([local, edges[:, :, None], prior[:, :, None]], axis=2)
