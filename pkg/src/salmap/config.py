"""Flat key=value run configuration.

Every tunable default lives here; config files must use known keys only, and
any key can be overridden through the environment as ``SALMAP_<KEY>`` (upper
case). Keep counts of 0 mean "keep everything available".
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .errors import DataError

ENV_PREFIX = "SALMAP_"


@dataclass(frozen=True)
class Config:
    # Working resolution; inputs are resized here before anything else.
    image_height: int = 480
    image_width: int = 640
    # Patch-transform fitting.
    saab_patch_cap: int = 200_000
    saab_channel_cap: int = 0
    # Coefficients forwarded to the next cascade stage, per kernel path.
    forward_keep_d8: int = 20
    forward_keep_d16: int = 50
    forward_keep_d32: int = 100
    # Spatial feature stack.
    local_saab_keep1: int = 3
    local_saab_keep2: int = 9
    edge_low_threshold: float = 0.1
    edge_high_threshold: float = 0.2
    edge_smoothing_sigma: float = 1.4
    center_sigma_fraction: float = 1.0 / 3.0
    # Feature ranking.
    rft_bins: int = 16
    map_keep_d8: int = 500
    map_keep_d16: int = 500
    map_keep_d32: int = 1000
    map_keep_d64: int = 1000
    residual_keep_d8: int = 500
    residual_keep_d16: int = 500
    # Fraction of pixels sampled per image when fitting regressors/rankings.
    pixel_fraction_d4: float = 0.1
    pixel_fraction_d8: float = 0.25
    pixel_fraction_d16: float = 0.25
    pixel_fraction_d32: float = 1.0
    pixel_fraction_d64: float = 1.0
    # Boosted-tree regressors (shared by all heads).
    gbt_trees: int = 300
    gbt_depth: int = 6
    gbt_learning_rate: float = 0.1
    gbt_subsample: float = 0.8
    gbt_min_samples_leaf: int = 20
    gbt_bins: int = 64
    # Final map post-processing.
    floor_quantile: float = 0.5
    blur_kernel_side: int = 10
    blur_sigma: float = 2.5
    # Reproducibility and training-time convenience.
    seed: int = 0
    cache_dir: str = ""

    def validate(self) -> None:
        if self.image_height < 64 or self.image_width < 64:
            raise ValueError("working resolution must be at least 64x64")
        if self.saab_patch_cap < 0 or self.saab_channel_cap < 0:
            raise ValueError("caps must be >= 0")
        for name in ("forward_keep_d8", "forward_keep_d16", "forward_keep_d32"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.local_saab_keep1 < 1 or self.local_saab_keep2 < 1:
            raise ValueError("local keeps must be >= 1")
        if not 0.0 < self.edge_low_threshold < self.edge_high_threshold:
            raise ValueError("need 0 < edge_low_threshold < edge_high_threshold")
        if self.edge_smoothing_sigma <= 0:
            raise ValueError("edge_smoothing_sigma must be positive")
        if self.center_sigma_fraction <= 0:
            raise ValueError("center_sigma_fraction must be positive")
        if self.rft_bins < 2:
            raise ValueError("rft_bins must be >= 2")
        for name in (
            "map_keep_d8",
            "map_keep_d16",
            "map_keep_d32",
            "map_keep_d64",
            "residual_keep_d8",
            "residual_keep_d16",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in (
            "pixel_fraction_d4",
            "pixel_fraction_d8",
            "pixel_fraction_d16",
            "pixel_fraction_d32",
            "pixel_fraction_d64",
        ):
            frac = getattr(self, name)
            if not 0.0 < frac <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.gbt_trees < 1 or self.gbt_depth < 1:
            raise ValueError("gbt_trees and gbt_depth must be >= 1")
        if not 0.0 < self.gbt_learning_rate <= 1.0:
            raise ValueError("gbt_learning_rate must be in (0, 1]")
        if not 0.0 < self.gbt_subsample <= 1.0:
            raise ValueError("gbt_subsample must be in (0, 1]")
        if self.gbt_min_samples_leaf < 1:
            raise ValueError("gbt_min_samples_leaf must be >= 1")
        if not 2 <= self.gbt_bins <= 256:
            raise ValueError("gbt_bins must be in 2..256")
        if not 0.0 <= self.floor_quantile <= 1.0:
            raise ValueError("floor_quantile must be in [0, 1]")
        if self.blur_kernel_side < 1:
            raise ValueError("blur_kernel_side must be >= 1")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.image_height, self.image_width


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _parse_value(name: str, raw: str, where: str):
    kind = _FIELDS[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"{where}: bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; blank lines and # comments are skipped."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELDS:
            raise DataError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw, f"{source}:{lineno}")
    return values


def load_config(path=None, environ=None) -> Config:
    """Build a Config from defaults, an optional file, and env overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, source=str(path)))
    if environ is None:
        environ = os.environ
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :].lower()
        if name not in _FIELDS:
            raise DataError(f"unknown config key in environment: {key}")
        values[name] = _parse_value(name, raw, f"${key}")
    cfg = Config(**values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return cfg


def config_to_text(cfg: Config) -> str:
    """Canonical echo of every key, one per line, in declaration order."""
    lines = []
    for f in dataclasses.fields(Config):
        value = getattr(cfg, f.name)
        rendered = value if isinstance(value, str) else repr(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> Config:
    cfg = Config(**parse_config_text(text))
    cfg.validate()
    return cfg
