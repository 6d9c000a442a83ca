"""MREN lightweight super-resolution: numpy autograd, model, metrics, training and analysis."""

from .autograd import ParamStore, Tape, Tensor
from .model import ModelConfig, MrenModel, init_model, mren_forward
from .training import TrainConfig, evaluate, fit

__all__ = [
    "ModelConfig",
    "MrenModel",
    "ParamStore",
    "Tape",
    "Tensor",
    "TrainConfig",
    "evaluate",
    "fit",
    "init_model",
    "mren_forward",
]
__version__ = "0.1.0"
