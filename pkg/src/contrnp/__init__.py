"""Contrastive neural processes for self-supervised time-series learning."""

from .autodiff import Tensor
from .data import Segment, SegmentBatch, TimeSeries, ViewPair
from .losses import ContrastiveConfig, LossBreakdown
from .model import ConvCnpModel, ModelConfig, Representation
from .train import TrainConfig, TrainLog, train

__all__ = [
    "Tensor", "TimeSeries", "Segment", "ViewPair", "SegmentBatch",
    "ContrastiveConfig", "LossBreakdown", "ConvCnpModel", "ModelConfig",
    "Representation", "TrainConfig", "TrainLog", "train",
]
