"""Unsupervised path-position and camera-angle embedding from detection sequences."""

from .errors import (
    ConfigError,
    DegenerateRotationError,
    DomainError,
    FormatError,
    InputError,
    InsufficientCoverageError,
    PathPoseError,
    UndefinedCorrelationError,
    ValidationError,
    VersionError,
)
from .model import LatentCode, ModelConfig, PoseAutoencoder, init_params
from .training import LossBreakdown, TrainConfig, train

__version__ = "0.1.0"
