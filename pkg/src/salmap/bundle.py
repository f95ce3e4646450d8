"""Versioned binary model bundles.

Layout: magic ``SALB``, format version, then a section table (name, payload
length, CRC32) followed by the payloads in table order. Sections are
``config`` (text echo), ``meta``, ``pipeline``, ``heads``, ``postproc``.
Serialization is canonical: writing a loaded bundle reproduces the original
bytes. Saves are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .config import Config, config_from_text, config_to_text
from .errors import (
    BundleChecksumError,
    BundleTruncatedError,
    BundleVersionError,
    DataError,
    ModelError,
)
from .gbt import GbtConfig, GbtModel, Tree
from .pipeline import FeaturePipeline, _plan_from_fitted
from .prediction import EnsembleHead, Head, PathHeads, PostProcessConfig, SaliencyModel
from .rft import RftResult
from .saab import SaabKernelSet
from .spatial import LocalSaabStages

MAGIC = b"SALB"
FORMAT_VERSION = 1
_SECTIONS = ("config", "meta", "pipeline", "heads", "postproc")

_DTYPES = {0: "<f8", 1: "<i8", 2: "<i4", 3: "|u1"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


@dataclass(frozen=True)
class TrainingMeta:
    dataset_name: str
    image_count: int
    seed: int
    timestamp: int  # dataset manifest mtime, for reproducible bundles


@dataclass
class ModelBundle:
    model: SaliencyModel
    meta: TrainingMeta
    format_version: int = FORMAT_VERSION

    @property
    def config(self) -> Config:
        return self.model.config


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u32(self, v: int):
        self.buf += struct.pack("<I", v)

    def i64(self, v: int):
        self.buf += struct.pack("<q", v)

    def f64(self, v: float):
        self.buf += struct.pack("<d", v)

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw

    def array(self, arr: np.ndarray):
        canonical = np.ascontiguousarray(arr)
        code = None
        for dt, c in _DTYPE_CODES.items():
            if canonical.dtype == dt:
                code = c
                break
        if code is None:
            if np.issubdtype(canonical.dtype, np.floating):
                canonical = canonical.astype("<f8")
            elif canonical.dtype == np.int32:
                canonical = canonical.astype("<i4")
            else:
                canonical = canonical.astype("<i8")
            code = _DTYPE_CODES[canonical.dtype]
        self.u32(code)
        self.u32(canonical.ndim)
        for dim in canonical.shape:
            self.u32(dim)
        raw = canonical.tobytes()
        self.u32(len(raw))
        self.buf += raw


class _Reader:
    def __init__(self, buf: bytes, context: str):
        self.buf = buf
        self.pos = 0
        self.context = context

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise BundleTruncatedError(f"bundle ends early inside {self.context}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        code = self.u32()
        if code not in _DTYPES:
            raise ModelError(f"unknown array dtype code {code} in {self.context}")
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        nbytes = self.u32()
        raw = self._take(nbytes)
        arr = np.frombuffer(raw, dtype=_DTYPES[code]).copy()
        expected = int(np.prod(shape)) if shape else arr.size
        if arr.size != expected:
            raise ModelError(f"array size mismatch in {self.context}")
        return arr.reshape(shape)

    def done(self):
        if self.pos != len(self.buf):
            raise ModelError(f"trailing bytes in {self.context}")


def _write_saab(w: _Writer, ks: SaabKernelSet):
    w.u32(ks.kernel_side)
    w.u32(ks.input_channels)
    w.array(ks.ac_kernels.astype("<f8", copy=False))
    w.array(ks.eigenvalues.astype("<f8", copy=False))
    w.array(ks.patch_mean.astype("<f8", copy=False))


def _read_saab(r: _Reader) -> SaabKernelSet:
    return SaabKernelSet(
        kernel_side=r.u32(),
        input_channels=r.u32(),
        ac_kernels=r.array(),
        eigenvalues=r.array(),
        patch_mean=r.array(),
    )


def _write_rft(w: _Writer, res: RftResult):
    w.array(res.r_op.astype("<f8", copy=False))
    w.array(res.ranking.astype("<i8", copy=False))
    w.array(res.selected.astype("<i8", copy=False))
    w.u32(res.bins)
    w.array(res.f_min.astype("<f8", copy=False))
    w.array(res.f_max.astype("<f8", copy=False))
    w.f64(res.target_variance)


def _read_rft(r: _Reader) -> RftResult:
    return RftResult(
        r_op=r.array(),
        ranking=r.array(),
        selected=r.array(),
        bins=r.u32(),
        f_min=r.array(),
        f_max=r.array(),
        target_variance=r.f64(),
    )


def _write_gbt(w: _Writer, model: GbtModel):
    cfg = model.config
    w.f64(model.base_prediction)
    w.u32(model.n_features)
    w.u32(cfg.tree_count)
    w.u32(cfg.max_depth)
    w.f64(cfg.learning_rate)
    w.f64(cfg.subsample)
    w.u32(cfg.min_samples_leaf)
    w.u32(cfg.histogram_bins)
    w.i64(cfg.seed)
    w.u32(len(model.trees))
    for tree in model.trees:
        w.array(tree.feature.astype("<i4", copy=False))
        w.array(tree.threshold.astype("<f8", copy=False))
        w.array(tree.left.astype("<i4", copy=False))
        w.array(tree.right.astype("<i4", copy=False))
        w.array(tree.value.astype("<f8", copy=False))


def _read_gbt(r: _Reader) -> GbtModel:
    base = r.f64()
    n_features = r.u32()
    cfg = GbtConfig(
        tree_count=r.u32(),
        max_depth=r.u32(),
        learning_rate=r.f64(),
        subsample=r.f64(),
        min_samples_leaf=r.u32(),
        histogram_bins=r.u32(),
        seed=r.i64(),
    )
    n_trees = r.u32()
    trees = []
    for _ in range(n_trees):
        trees.append(
            Tree(
                feature=r.array(),
                threshold=r.array(),
                left=r.array(),
                right=r.array(),
                value=r.array(),
            )
        )
    return GbtModel(base_prediction=base, n_features=n_features, config=cfg, trees=trees)


def _write_head(w: _Writer, head: Head):
    _write_rft(w, head.rft)
    _write_gbt(w, head.model)


def _read_head(r: _Reader) -> Head:
    return Head(rft=_read_rft(r), model=_read_gbt(r))


def _pipeline_payload(fp: FeaturePipeline) -> bytes:
    w = _Writer()
    keys = sorted(fp.saab)
    w.u32(len(keys))
    for factor, side in keys:
        w.u32(factor)
        w.u32(side)
        _write_saab(w, fp.saab[(factor, side)])
    fkeys = sorted(fp.forward_rft)
    w.u32(len(fkeys))
    for factor, side in fkeys:
        w.u32(factor)
        w.u32(side)
        _write_rft(w, fp.forward_rft[(factor, side)])
    skeys = sorted(fp.spatial)
    w.u32(len(skeys))
    for factor in skeys:
        w.u32(factor)
        _write_saab(w, fp.spatial[factor].stage1)
        _write_saab(w, fp.spatial[factor].stage2)
    return bytes(w.buf)


def _read_pipeline(raw: bytes, cfg: Config) -> FeaturePipeline:
    r = _Reader(raw, "section 'pipeline'")
    saab = {}
    for _ in range(r.u32()):
        factor = r.u32()
        side = r.u32()
        saab[(factor, side)] = _read_saab(r)
    forward = {}
    for _ in range(r.u32()):
        factor = r.u32()
        side = r.u32()
        forward[(factor, side)] = _read_rft(r)
    spatial = {}
    for _ in range(r.u32()):
        factor = r.u32()
        spatial[factor] = LocalSaabStages(stage1=_read_saab(r), stage2=_read_saab(r))
    r.done()
    plan = _plan_from_fitted(cfg, saab, forward, spatial)
    return FeaturePipeline(
        config=cfg, saab=saab, forward_rft=forward, spatial=spatial, plan=plan
    )


def _heads_payload(heads: PathHeads, ensemble: EnsembleHead) -> bytes:
    w = _Writer()
    w.u32(len(heads.map_heads))
    for name in sorted(heads.map_heads):
        w.text(name)
        _write_head(w, heads.map_heads[name])
    w.u32(len(heads.residual_heads))
    for name in sorted(heads.residual_heads):
        w.text(name)
        _write_head(w, heads.residual_heads[name])
    w.u32(ensemble.window)
    _write_gbt(w, ensemble.model)
    return bytes(w.buf)


def _read_heads(raw: bytes) -> tuple[PathHeads, EnsembleHead]:
    r = _Reader(raw, "section 'heads'")
    map_heads = {}
    for _ in range(r.u32()):
        name = r.text()
        map_heads[name] = _read_head(r)
    residual_heads = {}
    for _ in range(r.u32()):
        name = r.text()
        residual_heads[name] = _read_head(r)
    window = r.u32()
    model = _read_gbt(r)
    r.done()
    return PathHeads(map_heads, residual_heads), EnsembleHead(model=model, window=window)


def _postproc_payload(pp: PostProcessConfig) -> bytes:
    w = _Writer()
    w.f64(pp.floor_quantile)
    w.u32(pp.blur_kernel_side)
    w.f64(pp.blur_sigma)
    return bytes(w.buf)


def _read_postproc(raw: bytes) -> PostProcessConfig:
    r = _Reader(raw, "section 'postproc'")
    pp = PostProcessConfig(
        floor_quantile=r.f64(), blur_kernel_side=r.u32(), blur_sigma=r.f64()
    )
    r.done()
    return pp


def _meta_payload(meta: TrainingMeta) -> bytes:
    w = _Writer()
    w.text(meta.dataset_name)
    w.u32(meta.image_count)
    w.i64(meta.seed)
    w.i64(meta.timestamp)
    return bytes(w.buf)


def _read_meta(raw: bytes) -> TrainingMeta:
    r = _Reader(raw, "section 'meta'")
    meta = TrainingMeta(
        dataset_name=r.text(), image_count=r.u32(), seed=r.i64(), timestamp=r.i64()
    )
    r.done()
    return meta


def bundle_to_bytes(bundle: ModelBundle) -> bytes:
    payloads = {
        "config": config_to_text(bundle.config).encode("utf-8"),
        "meta": _meta_payload(bundle.meta),
        "pipeline": _pipeline_payload(bundle.model.pipeline),
        "heads": _heads_payload(bundle.model.heads, bundle.model.ensemble),
        "postproc": _postproc_payload(bundle.model.postproc),
    }
    head = _Writer()
    head.buf += MAGIC
    head.u32(bundle.format_version)
    head.u32(len(_SECTIONS))
    for name in _SECTIONS:
        raw = payloads[name]
        head.text(name)
        head.buf += struct.pack("<Q", len(raw))
        head.u32(zlib.crc32(raw))
    for name in _SECTIONS:
        head.buf += payloads[name]
    return bytes(head.buf)


def bundle_from_bytes(raw: bytes) -> ModelBundle:
    if raw[:4] != MAGIC:
        raise ModelError("not a model bundle (bad magic)")
    r = _Reader(raw, "bundle header")
    r.pos = 4
    version = r.u32()
    if version > FORMAT_VERSION:
        raise BundleVersionError(
            f"bundle format {version} is newer than supported {FORMAT_VERSION}"
        )
    n_sections = r.u32()
    table = []
    for _ in range(n_sections):
        name = r.text()
        length = struct.unpack("<Q", r._take(8))[0]
        crc = r.u32()
        table.append((name, length, crc))
    sections = {}
    for name, length, crc in table:
        payload = r._take(length)
        if zlib.crc32(payload) != crc:
            raise BundleChecksumError(f"checksum mismatch in section '{name}'")
        sections[name] = payload
    r.done()
    for name in _SECTIONS:
        if name not in sections:
            raise ModelError(f"bundle is missing section '{name}'")
    try:
        cfg = config_from_text(sections["config"].decode("utf-8"))
    except (DataError, ValueError, UnicodeDecodeError) as exc:
        raise ModelError(f"bad config section: {exc}") from exc
    meta = _read_meta(sections["meta"])
    pipeline = _read_pipeline(sections["pipeline"], cfg)
    heads, ensemble = _read_heads(sections["heads"])
    postproc = _read_postproc(sections["postproc"])
    model = SaliencyModel(
        pipeline=pipeline, heads=heads, ensemble=ensemble, postproc=postproc
    )
    return ModelBundle(model=model, meta=meta, format_version=version)


def save_bundle(bundle: ModelBundle, path) -> None:
    raw = bundle_to_bytes(bundle)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(suffix=".bundle", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_bundle(path) -> ModelBundle:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read bundle {path}: {exc}") from exc
    return bundle_from_bytes(raw)
