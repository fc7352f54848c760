"""Reverse-mode autodiff on numpy plus the two denoiser networks."""

from .autodiff import Tensor, no_grad, parameter
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .models import TransformerConfig, TransformerDenoiser, UNet1D, UNetConfig, build_model
from .train import TrainConfig, TrainingError, train

__all__ = [
    "Tensor",
    "no_grad",
    "parameter",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "TransformerConfig",
    "TransformerDenoiser",
    "UNet1D",
    "UNetConfig",
    "build_model",
    "TrainConfig",
    "TrainingError",
    "train",
]
