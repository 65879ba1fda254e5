"""Synthetic tasks, analyses and experiment drivers."""
from auxilearn.experiments.analysis import (
    LandscapeGrid,
    adjusted_rand,
    grid_axes,
    index_weight_spearman,
    landscape,
    mean_sem,
    weight_trajectory,
)
from auxilearn.experiments.config import EXPERIMENTS, ExperimentConfig, default_config, load_config
from auxilearn.experiments.runners import RUNNERS, ExperimentResult, run_experiment
from auxilearn.experiments.tasks import (
    IllustrativeTask,
    NoisyAuxTask,
    SubclassTask,
    gen_illustrative,
    gen_noisy_aux,
    gen_toy_labelgen_task,
)

__all__ = [
    "EXPERIMENTS", "ExperimentConfig", "ExperimentResult", "IllustrativeTask", "LandscapeGrid",
    "NoisyAuxTask", "RUNNERS", "SubclassTask", "adjusted_rand", "default_config", "gen_illustrative",
    "gen_noisy_aux", "gen_toy_labelgen_task", "grid_axes", "index_weight_spearman", "landscape",
    "load_config", "mean_sem", "run_experiment", "weight_trajectory",
]
