"""A small numpy neural-network engine: MLP and 1D-CNN, weighted cross-entropy, Adam."""

from .bundle import BundleError, ChecksumError, ModelBundle, VersionError, load_bundle, save_bundle
from .layers import Conv1D, Dense, Flatten, GlobalAvgPool1D, ReLU, softmax, weighted_cross_entropy
from .network import ModelSpec, Network
from .optim import Adam
from .training import TrainConfig, TrainingDiverged, TrainingHistory, evaluate, predict, train

__all__ = [
    "Adam", "BundleError", "ChecksumError", "Conv1D", "Dense", "Flatten", "GlobalAvgPool1D",
    "ModelBundle", "ModelSpec", "Network", "ReLU", "TrainConfig", "TrainingDiverged",
    "TrainingHistory", "VersionError", "evaluate", "load_bundle", "predict", "save_bundle",
    "softmax", "train", "weighted_cross_entropy",
]
