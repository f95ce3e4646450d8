"""Shared fixtures: a small synthetic dataset and a model trained on it."""

from types import SimpleNamespace

import pytest

from salmap.bundle import save_bundle
from salmap.config import Config
from salmap.toydata import generate_dataset
from salmap.train import train_model

# Cheap settings for a 128x160 working resolution; training takes well under
# a second, so CLI and serialization tests can share one real model.
LEAN_SETTINGS = dict(
    image_height=128,
    image_width=160,
    saab_patch_cap=20_000,
    saab_channel_cap=12,
    forward_keep_d8=6,
    forward_keep_d16=8,
    forward_keep_d32=10,
    map_keep_d8=24,
    map_keep_d16=24,
    map_keep_d32=24,
    map_keep_d64=24,
    residual_keep_d8=24,
    residual_keep_d16=24,
    pixel_fraction_d4=0.2,
    pixel_fraction_d8=0.3,
    pixel_fraction_d16=0.5,
    gbt_trees=10,
    gbt_depth=3,
    gbt_min_samples_leaf=5,
)


@pytest.fixture(scope="session")
def lean_config():
    return Config(**LEAN_SETTINGS)


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return generate_dataset(root, n_train=8, n_test=4, height=128, width=160, seed=3)


@pytest.fixture(scope="session")
def trained(toy_manifest, lean_config, tmp_path_factory):
    bundle, log = train_model(toy_manifest, lean_config)
    path = tmp_path_factory.mktemp("model") / "model.bundle"
    save_bundle(bundle, path)
    return SimpleNamespace(
        bundle=bundle,
        log=log,
        path=path,
        manifest=toy_manifest,
        config=lean_config,
    )
