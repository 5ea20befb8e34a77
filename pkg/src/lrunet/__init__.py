"""Layer-reuse convolutional networks on numpy: training, inference, accounting."""

from .accounting import CostReport, build_report, count_flops, count_params, depth
from .dataio import (
    LabeledImageSet,
    load_cifar10,
    load_cifar100,
    load_checkpoint,
    load_fashion_mnist,
    restore_network,
    save_checkpoint,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    LruNetError,
    ShapeError,
    StateError,
)
from .estimator import LruNetClassifier
from .network import LruNet, NetworkSpec, ParamStore, build_network
from .training import Metrics, TrainConfig, augment, evaluate, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CostReport",
    "DataError",
    "FormatError",
    "LabeledImageSet",
    "LruNet",
    "LruNetClassifier",
    "LruNetError",
    "Metrics",
    "NetworkSpec",
    "ParamStore",
    "ShapeError",
    "StateError",
    "TrainConfig",
    "augment",
    "build_network",
    "build_report",
    "count_flops",
    "count_params",
    "depth",
    "evaluate",
    "load_checkpoint",
    "load_cifar10",
    "load_cifar100",
    "load_fashion_mnist",
    "restore_network",
    "save_checkpoint",
    "sgd_step",
    "train",
    "__version__",
]
