"""Residual hourglass GRU network for raw-waveform speech enhancement."""

from .model import ModelConfig, ModelParams, build, forward, param_count
from .training import TrainSchedule, fit, logcosh_loss, rmsprop_step

__all__ = ["ModelConfig", "ModelParams", "build", "forward", "param_count",
           "TrainSchedule", "fit", "logcosh_loss", "rmsprop_step"]
__version__ = "0.1.0"
