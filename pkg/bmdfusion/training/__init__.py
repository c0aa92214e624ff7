from bmdfusion.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from bmdfusion.training.crossval import (
    DEFAULT_VARIANTS,
    AblationResult,
    CrossValidationResult,
    cross_validate,
    run_ablation_matrix,
    variant_config,
)
from bmdfusion.training.optim import AdamState, adam_step
from bmdfusion.training.trainer import FoldResult, History, predict, train_fold

__all__ = [
    "DEFAULT_VARIANTS", "AblationResult", "AdamState", "Checkpoint", "CrossValidationResult",
    "FoldResult", "History", "adam_step", "cross_validate", "load_checkpoint", "predict",
    "run_ablation_matrix", "save_checkpoint", "train_fold", "variant_config",
]
