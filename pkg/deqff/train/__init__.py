from .checkpoint import (
    Checkpoint,
    CheckpointError,
    capture,
    load_model_state,
    load_optimizer_state,
    read_checkpoint,
    restore_generator,
    restore_model,
    write_checkpoint,
)
from .config import TrainConfig, TrainingAbortedError
from .loop import TrainResult, split_dataset, train_loop
from .loss import LossTerms, loss
from .optim import build_optimizer, optimizer_step
from .schedule import lr_schedule

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "LossTerms",
    "TrainConfig",
    "TrainResult",
    "TrainingAbortedError",
    "build_optimizer",
    "capture",
    "load_model_state",
    "load_optimizer_state",
    "loss",
    "lr_schedule",
    "optimizer_step",
    "read_checkpoint",
    "restore_generator",
    "restore_model",
    "split_dataset",
    "train_loop",
    "write_checkpoint",
]
