"""Training orchestration: config parsing, the step loop, checkpoints."""

from .config import (TrainConfig, apply_overrides, load_train_config,
                     parse_config_text, section_kwargs)
from .trainer import (MultiTaskLoss, TrainResult, config_for_single_task,
                      evaluate_model, held_out_split, single_task_train, train,
                      train_step)

__all__ = [
    "TrainConfig", "apply_overrides", "load_train_config", "parse_config_text",
    "section_kwargs",
    "MultiTaskLoss", "TrainResult", "config_for_single_task", "evaluate_model",
    "held_out_split", "single_task_train", "train", "train_step",
]
