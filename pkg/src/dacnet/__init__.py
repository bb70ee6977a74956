"""Lightweight dilated depthwise-separable convnet for domestic audio scenes."""

from .complexity import ComplexityReport, analyze_network, layer_macs, layer_params
from .errors import ConfigError, DacnetError, DataError, NumericError, ShapeError
from .estimators import DacNetClassifier, LogMelFrontend
from .frontend import FrontendConfig, LogMelFeature, compute_features
from .gradcheck import finite_difference_check
from .network import (
    BlockSpec,
    Model,
    MultiScaleEmbedding,
    NetworkConfig,
    ablation_variant,
    build_network,
)
from .ops import ConvSpec, conv2d_backward, conv2d_forward, count_macs
from .presets import RunConfig, load_preset
from .tensor import GradientTape, Tensor
from .training import ConfusionMatrix, TrainConfig, adam_step, evaluate, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "ComplexityReport",
    "ConfigError",
    "ConfusionMatrix",
    "ConvSpec",
    "DacNetClassifier",
    "DacnetError",
    "DataError",
    "FrontendConfig",
    "GradientTape",
    "LogMelFeature",
    "LogMelFrontend",
    "Model",
    "MultiScaleEmbedding",
    "NetworkConfig",
    "NumericError",
    "RunConfig",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "ablation_variant",
    "adam_step",
    "analyze_network",
    "build_network",
    "compute_features",
    "conv2d_backward",
    "conv2d_forward",
    "count_macs",
    "evaluate",
    "finite_difference_check",
    "layer_macs",
    "layer_params",
    "load_preset",
    "lr_schedule",
    "train",
    "__version__",
]
