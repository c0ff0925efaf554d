"""Training: discounted loss, batch sampling, checkpoints and the optimization loop."""

from .checkpoint import (Checkpoint, CheckpointError, build_model, from_model, load, load_into, model_tensors,
                         save)
from .data import Batch, make_batch, max_offset, normalize_boxes, sample_batch
from .loss import discount, discounts, loss, trajectory_loss
from .loop import TrainConfig, TrainingDiverged, TrainResult, train, within_error

__all__ = [
    "Checkpoint", "CheckpointError", "build_model", "from_model", "load", "load_into", "model_tensors", "save",
    "Batch", "make_batch", "max_offset", "normalize_boxes", "sample_batch", "discount", "discounts", "loss",
    "trajectory_loss", "TrainConfig", "TrainingDiverged", "TrainResult", "train", "within_error",
]
