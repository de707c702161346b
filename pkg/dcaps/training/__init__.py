from dcaps.training.adam import AdamState, adam_step
from dcaps.training.crossval import CrossValResult, run_ablation, run_cross_validation
from dcaps.training.folds import Fold, stratified_kfold
from dcaps.training.trainer import TrainConfig, TrainingData, train_fold

__all__ = [
    "AdamState",
    "CrossValResult",
    "Fold",
    "TrainConfig",
    "TrainingData",
    "adam_step",
    "run_ablation",
    "run_cross_validation",
    "stratified_kfold",
    "train_fold",
]
