"""Acceptance checks for the whole package.

Each test prints one `[acceptance] <name>: PASS/FAIL (...)` line straight to
the terminal (bypassing capture) so a `pytest -v` run shows a live verdict per
criterion. The desk-scale end-to-end tests share one trained model via a
module fixture; expect the full file to take a few minutes on one core.
"""

import os
import subprocess
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.random import default_rng

from salmap.bundle import bundle_to_bytes, save_bundle
from salmap.config import Config
from salmap.dataset import entry_fixation_map, ingest_dataset, load_entry_image, load_gt_map
from salmap.gbt import GbtConfig, gbt_fit, gbt_predict, training_mse
from salmap.metrics import FixationMap, auc_judd, cc, nss, shuffled_auc, sim
from salmap.prediction import per_path_maps, predict_saliency
from salmap.rft import rft_rank
from salmap.saab import SaabConfig, apply_saab, extract_patches, fit_saab
from salmap.spatial import CenterPriorConfig, center_prior, default_prior_sigma
from salmap.toydata import generate_dataset
from salmap.train import train_model

# Desk-scale training configuration: full working resolution, channel counts
# tuned so the 60-image run finishes in minutes on a single core.
DESK_SETTINGS = dict(
    saab_patch_cap=30_000,
    saab_channel_cap=48,
    forward_keep_d8=16,
    forward_keep_d16=24,
    forward_keep_d32=32,
    map_keep_d8=160,
    map_keep_d16=160,
    map_keep_d32=160,
    map_keep_d64=160,
    residual_keep_d8=160,
    residual_keep_d16=160,
    pixel_fraction_d4=0.16,
    pixel_fraction_d8=0.2,
    pixel_fraction_d16=0.5,
    gbt_trees=110,
    gbt_depth=4,
)


@pytest.fixture
def announce(capsys):
    def report(name: str, ok: bool, detail: str) -> None:
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"[acceptance] {name}: {status} ({detail})", flush=True)
        assert ok, f"{name}: {detail}"

    return report


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    """Train once at desk scale; share the model and its evaluation."""
    root = tmp_path_factory.mktemp("desk")
    manifest = generate_dataset(root / "data", n_train=60, n_test=20, seed=11)
    cfg = Config(**DESK_SETTINGS, cache_dir=str(root / "cache"))

    t0 = time.perf_counter()
    bundle, _ = train_model(manifest, cfg)
    train_seconds = time.perf_counter() - t0

    bundle_path = root / "model.salb"
    save_bundle(bundle, bundle_path)

    size = (cfg.image_height, cfg.image_width)
    prior = center_prior(
        cfg.image_height,
        cfg.image_width,
        CenterPriorConfig(default_prior_sigma(cfg.image_height, cfg.image_width)),
    )
    test_entries = ingest_dataset(manifest).split_entries("test")
    t0 = time.perf_counter()
    path_cc: dict[str, list] = {}
    test_image = None
    for entry in test_entries:
        img = load_entry_image(entry, size)
        if test_image is None:
            test_image = img
        gt = load_gt_map(entry.gt, size)
        for key, m in per_path_maps(bundle.model, img).items():
            path_cc.setdefault(key, []).append(cc(m, gt))
        path_cc.setdefault("prior", []).append(cc(prior, gt))
    eval_seconds = time.perf_counter() - t0

    return SimpleNamespace(
        manifest=manifest,
        config=cfg,
        bundle=bundle,
        bundle_path=bundle_path,
        bundle_bytes=bundle_to_bytes(bundle),
        test_entries=test_entries,
        test_image=test_image,
        mean_cc={k: float(np.mean(v)) for k, v in path_cc.items()},
        train_seconds=train_seconds,
        eval_seconds=eval_seconds,
    )


class TestTransformSuite:
    def test_energy_gram_and_eigenvalues(self, announce):
        t0 = time.perf_counter()
        rng = default_rng(42)
        images = [rng.random((32, 40, 3)) for _ in range(50)]
        ks = fit_saab(images, SaabConfig(kernel_side=3, max_kept_channels=0, patch_cap=0))

        # Untruncated decomposition: total coefficient energy equals the
        # mean-removed patch energy, image by image.
        worst_energy = 0.0
        for img in images:
            patches = extract_patches(img, 3)
            out = apply_saab(img, ks).reshape(-1, ks.n_channels)
            ref = ((patches - ks.patch_mean) ** 2).sum(axis=1)
            got = (out**2).sum(axis=1)
            worst_energy = max(worst_energy, float(np.max(np.abs(got - ref) / ref)))

        kernels = np.vstack([ks.dc_kernel, ks.ac_kernels])
        gram_err = float(np.max(np.abs(kernels @ kernels.T - np.eye(ks.n_channels))))

        # Dense eigensolver oracle over the exact same patch population.
        all_patches = np.vstack([extract_patches(img, 3) for img in images])
        dc = ks.dc_kernel
        resid = all_patches - np.outer(all_patches @ dc, dc)
        resid -= resid.mean(axis=0)
        cov = resid.T @ resid / resid.shape[0]
        oracle = np.linalg.eigvalsh(cov)[::-1]
        eig_err = float(np.max(np.abs(ks.eigenvalues - oracle[: ks.eigenvalues.size])))

        elapsed = time.perf_counter() - t0
        ok = worst_energy < 1e-6 and gram_err < 1e-8 and eig_err < 1e-6 and elapsed < 60
        announce(
            "patch-transform energy/orthonormality/eigenvalues",
            ok,
            f"energy rel err {worst_energy:.2e}, gram err {gram_err:.2e}, "
            f"eig err {eig_err:.2e}, {elapsed:.1f}s",
        )


class TestRankingSuite:
    def test_planted_columns_and_oracle(self, announce):
        t0 = time.perf_counter()
        rng = default_rng(7)
        x = rng.standard_normal((1000, 64))
        planted = (5, 17, 33, 52)
        y = (
            1.2 * (x[:, 5] > 0.3)
            + 0.9 * (x[:, 17] < -0.2)
            + 0.7 * (x[:, 33] > 0.0)
            + 0.5 * (x[:, 52] > 0.8)
            + 0.05 * rng.standard_normal(1000)
        )
        res = rft_rank(x, y, bins=16)
        in_top8 = set(planted) <= set(res.ranking[:8].tolist())

        # Exhaustive oracle: direct variance arithmetic at every threshold.
        worst = 0.0
        n = y.size
        for j in range(64):
            col = x[:, j]
            lo, hi = col.min(), col.max()
            best = np.inf
            for b in range(1, 16):
                t = lo + (hi - lo) * b / 16.0
                left = col < t
                nl = int(left.sum())
                if nl == 0 or nl == n:
                    cost = np.var(y)
                else:
                    cost = (nl * np.var(y[left]) + (n - nl) * np.var(y[~left])) / n
                best = min(best, cost)
            best = max(best if np.isfinite(best) else np.var(y), 0.0)
            worst = max(worst, abs(best - res.r_op[j]))

        elapsed = time.perf_counter() - t0
        ok = in_top8 and worst < 1e-10 and elapsed < 10
        announce(
            "feature-ranking planted columns + oracle",
            ok,
            f"planted in top-8: {in_top8}, max score err {worst:.1e}, {elapsed:.1f}s",
        )


class TestRegressorSuite:
    def test_fit_invariance_and_roundtrip(self, announce):
        t0 = time.perf_counter()
        rng = default_rng(11)
        x = rng.random((600, 3))
        y = np.where(x[:, 0] > 0.5, 2.0, -1.0) + np.where(x[:, 1] > 0.3, 0.5, 0.0)
        cfg = GbtConfig(
            tree_count=60,
            max_depth=4,
            learning_rate=0.3,
            subsample=1.0,
            min_samples_leaf=2,
            histogram_bins=64,
            seed=0,
        )
        model = gbt_fit(x, y, cfg)
        mse = training_mse(model, x, y)

        # Strictly increasing per-feature warps must not change the fit.
        warped = x.copy()
        warped[:, 0] = np.exp(warped[:, 0])
        warped[:, 1] = warped[:, 1] ** 3
        model_w = gbt_fit(warped, y, cfg)
        probes = rng.random((200, 3))
        probes_w = probes.copy()
        probes_w[:, 0] = np.exp(probes_w[:, 0])
        probes_w[:, 1] = probes_w[:, 1] ** 3
        inv_err = float(
            np.max(np.abs(gbt_predict(model, probes) - gbt_predict(model_w, probes_w)))
        )

        # Serialization round-trip must be bit-identical.
        from salmap.bundle import _Reader, _Writer, _read_gbt, _write_gbt

        w = _Writer()
        _write_gbt(w, model)
        raw = bytes(w.buf)
        loaded = _read_gbt(_Reader(raw, "roundtrip"))
        w2 = _Writer()
        _write_gbt(w2, loaded)
        bit_identical = bytes(w2.buf) == raw
        preds_equal = np.array_equal(gbt_predict(model, probes), gbt_predict(loaded, probes))

        elapsed = time.perf_counter() - t0
        ok = mse < 1e-3 and inv_err < 1e-9 and bit_identical and preds_equal and elapsed < 30
        announce(
            "boosted-tree fit/invariance/round-trip",
            ok,
            f"train mse {mse:.1e}, warp err {inv_err:.1e}, "
            f"bit-identical {bit_identical}, {elapsed:.1f}s",
        )


def _sweep_roc(scores: np.ndarray, pos_idx: np.ndarray, neg_idx: np.ndarray) -> float:
    """Definitional ROC area: threshold at each positive score, >= detects."""
    pos = scores[pos_idx]
    neg = scores[neg_idx]
    xs, ys = [0.0], [0.0]
    for t in np.unique(pos)[::-1]:
        xs.append(float((neg >= t).mean()))
        ys.append(float((pos >= t).mean()))
    xs.append(1.0)
    ys.append(1.0)
    area = 0.0
    for x0, x1, y0, y1 in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


class TestMetricSuite:
    def test_definitional_oracles(self, announce):
        rng = default_rng(3)
        worst = {"cc": 0.0, "sim": 0.0, "nss": 0.0, "auc_j": 0.0, "s_auc": 0.0}
        for _ in range(20):
            pred = rng.random((8, 10))
            gt = rng.random((8, 10))
            pts = np.column_stack([rng.integers(0, 10, 6), rng.integers(0, 8, 6)])
            fix = FixationMap(8, 10, pts)
            others = [
                FixationMap(8, 10, np.column_stack([rng.integers(0, 10, 5), rng.integers(0, 8, 5)]))
                for _ in range(3)
            ]

            worst["cc"] = max(worst["cc"], abs(cc(pred, gt) - np.corrcoef(pred.ravel(), gt.ravel())[0, 1]))
            p, g = pred / pred.sum(), gt / gt.sum()
            worst["sim"] = max(worst["sim"], abs(sim(pred, gt) - np.minimum(p, g).sum()))

            z = (pred - pred.mean()) / pred.std()
            fixed = sorted({(int(px), int(py)) for px, py in pts})
            nss_ref = np.mean([z[py, px] for px, py in fixed])
            worst["nss"] = max(worst["nss"], abs(nss(pred, fix) - nss_ref))

            flat = pred.ravel()
            pos = fix.unique_flat()
            neg = np.setdiff1d(np.arange(flat.size), pos)
            worst["auc_j"] = max(worst["auc_j"], abs(auc_judd(pred, fix) - _sweep_roc(flat, pos, neg)))

            pool = np.concatenate([o.unique_flat() for o in others])
            worst["s_auc"] = max(
                worst["s_auc"], abs(shuffled_auc(pred, fix, others) - _sweep_roc(flat, pos, pool))
            )

        ok = all(v < 1e-12 for v in worst.values())
        detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
        announce("metric definitional oracles", ok, detail)

    def test_center_bias_discounting(self, announce):
        # Fixations drawn from one shared center distribution: a center map
        # must look excellent to the plain ROC and like chance to the
        # shuffled one.
        rng = default_rng(19)
        h, w = 96, 128
        sigma = min(h, w) / 5.0
        pred = center_prior(h, w, CenterPriorConfig(sigma))
        fixsets = []
        for _ in range(12):
            ys = np.clip(np.round(rng.normal(h / 2, sigma, 80)), 0, h - 1)
            xs = np.clip(np.round(rng.normal(w / 2, sigma, 80)), 0, w - 1)
            fixsets.append(FixationMap(h, w, np.column_stack([xs, ys]).astype(np.int64)))

        aucs, sauces = [], []
        for i, fix in enumerate(fixsets):
            others = fixsets[:i] + fixsets[i + 1 :]
            aucs.append(auc_judd(pred, fix))
            sauces.append(shuffled_auc(pred, fix, others))
        mean_auc = float(np.mean(aucs))
        mean_sauc = float(np.mean(sauces))

        ok = mean_auc > 0.8 and abs(mean_sauc - 0.5) <= 0.05
        announce(
            "center-bias discounting",
            ok,
            f"auc_j {mean_auc:.3f} (> 0.8), s_auc {mean_sauc:.3f} (0.5 +/- 0.05)",
        )


class TestEndToEnd:
    def test_ensemble_margins(self, desk, announce):
        mean_cc = desk.mean_cc
        margin = mean_cc["ensemble"] - mean_cc["prior"]
        # The four path outputs the ensemble consumes; bare d32/d64 are
        # pre-correction diagnostics, not standalone paths.
        paths = ("d8", "d16", "d32+rp", "d64+rp")
        gaps = {k: mean_cc["ensemble"] - mean_cc[k] for k in paths}
        worst_gap = min(gaps.values())
        total = desk.train_seconds + desk.eval_seconds
        ok = margin >= 0.05 and worst_gap >= -0.01 and total < 900
        detail = (
            f"ensemble cc {mean_cc['ensemble']:.3f}, prior cc {mean_cc['prior']:.3f}, "
            f"margin {margin:+.3f} (>= +0.05), worst path gap {worst_gap:+.3f} (>= -0.01), "
            f"train {desk.train_seconds:.0f}s + eval {desk.eval_seconds:.0f}s (< 900s)"
        )
        announce("end-to-end ensemble margins", ok, detail)

    def test_bundle_size(self, desk, announce):
        mb = len(desk.bundle_bytes) / 1e6
        ok = mb < 10.0
        announce("bundle size", ok, f"{mb:.2f} MB (< 10 MB)")

    def test_inference_speed(self, desk, announce):
        entry = desk.test_entries[0]
        code = (
            "import time\n"
            "from salmap.bundle import load_bundle\n"
            "from salmap.imaging import load_and_normalize\n"
            "from salmap.prediction import predict_saliency\n"
            f"b = load_bundle({str(desk.bundle_path)!r})\n"
            f"img = load_and_normalize({str(entry.image)!r}, (480, 640))\n"
            "predict_saliency(b.model, img)\n"
            "t0 = time.perf_counter()\n"
            "predict_saliency(b.model, img)\n"
            "print(time.perf_counter() - t0)\n"
        )
        env = dict(
            os.environ,
            OPENBLAS_NUM_THREADS="1",
            OMP_NUM_THREADS="1",
            MKL_NUM_THREADS="1",
        )
        proc = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
        )
        seconds = float(proc.stdout.strip().splitlines()[-1])
        ok = seconds < 0.5
        announce("single-image inference speed", ok, f"{seconds:.3f}s on one core (< 0.5s)")

    def test_training_determinism(self, desk, announce):
        again, _ = train_model(desk.manifest, desk.config)
        identical = bundle_to_bytes(again) == desk.bundle_bytes
        announce("same-seed training determinism", identical, "byte-identical bundles")

    def test_prediction_determinism(self, desk, announce):
        a = predict_saliency(desk.bundle.model, desk.test_image)
        b = predict_saliency(desk.bundle.model, desk.test_image)
        identical = np.array_equal(a, b)
        announce("prediction bit-reproducibility", identical, "identical output maps")
