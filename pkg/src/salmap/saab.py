"""Data-driven orthonormal patch transform (mean-removal PCA on sliding patches).

A fitted kernel set holds one constant DC kernel plus AC kernels obtained by
PCA of the DC-removed patch residuals, ordered by nonincreasing eigenvalue.
Applying the transform to an (H, W, C) tensor yields an (H, W, K) coefficient
tensor at the same spatial resolution (stride 1, replicate padding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitError

_EIG_REL_TOL = 1e-10


@dataclass(frozen=True)
class SaabConfig:
    kernel_side: int
    max_kept_channels: int = 0  # 0 keeps every positive-eigenvalue channel
    patch_cap: int = 200_000
    seed: int = 0


@dataclass
class SaabKernelSet:
    kernel_side: int
    input_channels: int
    ac_kernels: np.ndarray  # (n_ac, k*k*C), orthonormal rows
    eigenvalues: np.ndarray  # (n_ac,), nonincreasing
    patch_mean: np.ndarray = field(repr=False)  # (k*k*C,), removed before AC projection

    @property
    def patch_dim(self) -> int:
        return self.kernel_side * self.kernel_side * self.input_channels

    @property
    def n_channels(self) -> int:
        return 1 + self.ac_kernels.shape[0]

    @property
    def dc_kernel(self) -> np.ndarray:
        d = self.patch_dim
        return np.full(d, 1.0 / np.sqrt(d))


def extract_patches(t: np.ndarray, kernel_side: int) -> np.ndarray:
    """Sliding k x k patches (stride 1, replicate padding) as (H*W, k*k*C) rows.

    Patch entries are laid out (row, col, channel) row-major.
    """
    x = np.asarray(t, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) tensor, got shape {x.shape}")
    h, w, c = x.shape
    k = kernel_side
    lo = (k - 1) // 2
    hi = k - 1 - lo
    xp = np.pad(x, ((lo, hi), (lo, hi), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, k * k * c)


def _sample_rows(n: int, cap: int, rng: np.random.Generator) -> np.ndarray | None:
    if cap <= 0 or n <= cap:
        return None
    return np.sort(rng.choice(n, size=cap, replace=False))


def fit_saab(images, cfg: SaabConfig) -> SaabKernelSet:
    """Fit DC + PCA kernels on patches pooled from ``images``.

    Patches are drawn per image up to an even share of ``cfg.patch_cap``
    (seeded, without replacement). With fewer patches than the patch
    dimension the covariance is rank-deficient and the null directions are
    dropped by the eigenvalue threshold.
    """
    images = list(images)
    if not images:
        raise FitError("no images to fit on")
    first = np.asarray(images[0])
    c = 1 if first.ndim == 2 else first.shape[2]
    k = cfg.kernel_side
    d = k * k * c
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5AAB)))
    share = -1
    if cfg.patch_cap > 0:
        share = -(-cfg.patch_cap // len(images))
    chunks = []
    for img in images:
        patches = extract_patches(img, k)
        if patches.shape[1] != d:
            raise ValueError("images have inconsistent channel counts")
        rows = _sample_rows(patches.shape[0], share, rng)
        chunks.append(patches if rows is None else patches[rows])
    x = np.concatenate(chunks, axis=0)
    if cfg.patch_cap > 0 and x.shape[0] > cfg.patch_cap:
        x = x[np.sort(rng.choice(x.shape[0], size=cfg.patch_cap, replace=False))]
    if x.shape[0] < 2:
        raise FitError(f"need at least 2 patches to fit, got {x.shape[0]}")

    dc = np.full(d, 1.0 / np.sqrt(d))
    resid = x - np.outer(x @ dc, dc)
    patch_mean = resid.mean(axis=0)
    centered = resid - patch_mean
    cov = (centered.T @ centered) / centered.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    limit = d - 1
    if cfg.max_kept_channels > 0:
        limit = min(limit, cfg.max_kept_channels - 1)
    tol = max(evals[0], 0.0) * _EIG_REL_TOL if evals.size else 0.0
    n_ac = min(limit, int(np.sum(evals > tol)))
    kernels = evecs[:, :n_ac].T.copy()
    # Fix eigenvector signs so refits are reproducible bit-for-bit.
    for row in kernels:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return SaabKernelSet(
        kernel_side=k,
        input_channels=c,
        ac_kernels=kernels,
        eigenvalues=evals[:n_ac].copy(),
        patch_mean=patch_mean,
    )


def apply_saab(t: np.ndarray, ks: SaabKernelSet) -> np.ndarray:
    """Project sliding patches of ``t`` onto the kernel set.

    Returns (H, W, 1 + n_ac) with the DC coefficient at channel 0. The stored
    patch mean is removed before the AC projections only.
    """
    x = np.asarray(t, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape[2] != ks.input_channels:
        raise ValueError(
            f"tensor has {x.shape[2]} channels, kernels expect {ks.input_channels}"
        )
    h, w = x.shape[:2]
    patches = extract_patches(x, ks.kernel_side)
    out = np.empty((h * w, ks.n_channels))
    out[:, 0] = patches @ ks.dc_kernel
    if ks.ac_kernels.shape[0]:
        out[:, 1:] = (patches - ks.patch_mean) @ ks.ac_kernels.T
    return out.reshape(h, w, ks.n_channels)
