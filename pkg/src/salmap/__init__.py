"""Multi-layer saliency prediction without neural networks.

Feature extraction runs two data-driven filter cascades over an image
pyramid, mixes in edge/center cues, and supervised selection keeps the
informative channels. Boosted-tree heads predict per-resolution saliency
maps that a final regressor fuses into one full-resolution map.
"""

from .bundle import ModelBundle, TrainingMeta, load_bundle, save_bundle
from .config import Config, load_config
from .errors import (
    BundleChecksumError,
    BundleTruncatedError,
    BundleVersionError,
    DataError,
    FitError,
    ModelError,
    SalmapError,
    UndefinedMetricError,
)
from .metrics import FixationMap, evaluate_prediction
from .prediction import SaliencyModel, per_path_maps, predict_saliency
from .train import train_model

__version__ = "0.1.0"

__all__ = [
    "Config",
    "DataError",
    "FixationMap",
    "ModelBundle",
    "ModelError",
    "SalmapError",
    "SaliencyModel",
    "TrainingMeta",
    "BundleChecksumError",
    "BundleTruncatedError",
    "BundleVersionError",
    "FitError",
    "UndefinedMetricError",
    "evaluate_prediction",
    "load_bundle",
    "load_config",
    "per_path_maps",
    "predict_saliency",
    "save_bundle",
    "train_model",
    "__version__",
]
