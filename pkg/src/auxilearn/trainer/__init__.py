"""Alternating training of primary and auxiliary parameters."""
from auxilearn.trainer.checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from auxilearn.trainer.config import TrainConfig, aux_on_train_mode, build_dataclass
from auxilearn.trainer.data import BatchSampler, Samples, SplitDataset, split
from auxilearn.trainer.loop import RunRecord, Trainer, fit
from auxilearn.trainer.optim import Optimizer, OptimizerConfig
from auxilearn.trainer.problems import LabelGenProblem, LinearRegressor, Problem, RegressionCombinerProblem

__all__ = [
    "BatchSampler", "LabelGenProblem", "LinearRegressor", "Optimizer", "OptimizerConfig", "Problem",
    "RegressionCombinerProblem", "RunRecord", "Samples", "SplitDataset", "TrainConfig", "Trainer",
    "atomic_write_text", "aux_on_train_mode", "build_dataclass", "fit", "load_checkpoint",
    "save_checkpoint", "split",
]
