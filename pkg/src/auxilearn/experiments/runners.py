"""End-to-end experiment drivers; each is a pure function of (config, seed)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from auxilearn.experiments.analysis import (
    LandscapeGrid,
    adjusted_rand,
    final_weights,
    grid_axes,
    index_weight_spearman,
    landscape,
    weight_trajectory,
)
from auxilearn.experiments.config import ExperimentConfig
from auxilearn.experiments.tasks import gen_illustrative, gen_noisy_aux, gen_toy_labelgen_task
from auxilearn.labelgen import LabelGenerator, StudentNet
from auxilearn.trainer.config import aux_on_train_mode
from auxilearn.trainer.data import SplitDataset
from auxilearn.trainer.loop import RunRecord, Trainer
from auxilearn.trainer.problems import LabelGenProblem, LinearRegressor, Problem, RegressionCombinerProblem


@dataclass
class ExperimentResult:
    """Everything a run writes: the primary run's record, side runs, tables and grids."""

    summary: dict
    runs: dict[str, RunRecord] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    landscapes: dict[str, LandscapeGrid] = field(default_factory=dict)
    checkpoints: dict[str, dict] = field(default_factory=dict)
    primary: str = "auxilearn"


def _train(name, cfg, problem: Problem, data: SplitDataset, result: ExperimentResult, log_dir, phi=None) -> RunRecord:
    trainer = Trainer(cfg, problem, data, phi=phi)
    log = None
    if log_dir is not None:
        log = Path(log_dir) / ("metrics.jsonl" if name == result.primary else f"metrics.{name}.jsonl")
    record = trainer.fit(log)
    result.runs[name] = record
    result.checkpoints[name] = trainer.state_dict()
    return record


def _regression_problem(cfg: ExperimentConfig, data: SplitDataset) -> RegressionCombinerProblem:
    n_aux = data.train.aux.shape[1]
    return RegressionCombinerProblem(LinearRegressor(data.train.x.shape[1], cfg.model.bias), cfg.combiner.build(n_aux))


def _with_seed(cfg: ExperimentConfig, seed: int):
    return cfg.train.replace(seed=seed)


def run_illustrative(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    """Joint training, main-only training, and retraining with the final combiner frozen."""
    data = gen_illustrative(cfg.task, seed)
    problem = _regression_problem(cfg, data)
    train = _with_seed(cfg, seed)
    result = ExperimentResult(summary={})
    joint = _train("auxilearn", train, problem, data, result, log_dir)
    stl = _train("stl", train.replace(outer_steps=0), problem, data, result, log_dir)
    fixed = _train("fixed_aux", train.replace(freeze_phi=True), problem, data, result, log_dir, phi=joint.final_phi)
    phi0 = Trainer(train, problem, data).phi
    axes = grid_axes(cfg.grid.lo, cfg.grid.hi, cfg.grid.n)
    result.landscapes = {
        "main": landscape(axes, None, None, data.train),
        "t0": landscape(axes, phi0, problem.combiner, data.train),
        "tT": landscape(axes, joint.final_phi, problem.combiner, data.train),
    }
    w_star = np.asarray(cfg.task.w_star)
    weights = final_weights(joint)
    result.tables["weights"] = weight_trajectory(joint)
    result.summary = {
        "test_mse": problem.metric(joint.final_w, data.test),
        "stl_test_mse": problem.metric(stl.final_w, data.test),
        "fixed_aux_test_mse": problem.metric(fixed.final_w, data.test),
        "helpful_weight": weights["aux1"],
        "harmful_weight": weights["aux2"],
        "main_argmin_dist": float(np.linalg.norm(result.landscapes["main"].argmin() - w_star)),
        "tT_argmin_dist": float(np.linalg.norm(result.landscapes["tT"].argmin() - w_star)),
    }
    return result


def run_aux_on_train(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    """Same task with phi fitted on the training set versus the auxiliary set."""
    data = gen_illustrative(cfg.task, seed)
    problem = _regression_problem(cfg, data)
    train = _with_seed(cfg, seed)
    result = ExperimentResult(summary={}, primary="aux_on_train")
    on_train = _train("aux_on_train", aux_on_train_mode(train), problem, data, result, log_dir)
    default = _train("auxilearn", train, problem, data, result, log_dir)
    initial = sum(problem.task_weights(Trainer(train, problem, data).phi).values())
    result.tables["weights"] = weight_trajectory(on_train)
    result.tables["weights_default"] = weight_trajectory(default)
    result.summary = {
        "initial_weight_sum": initial,
        "aux_on_train_weight_sum": sum(final_weights(on_train).values()),
        "default_weight_sum": sum(final_weights(default).values()),
        "aux_on_train_test_mse": problem.metric(on_train.final_w, data.test),
        "test_mse": problem.metric(default.final_w, data.test),
    }
    return result


def run_noisy_aux(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    data = gen_noisy_aux(cfg.task, seed)
    problem = _regression_problem(cfg, data)
    train = _with_seed(cfg, seed)
    result = ExperimentResult(summary={})
    joint = _train("auxilearn", train, problem, data, result, log_dir)
    stl = _train("stl", train.replace(outer_steps=0), problem, data, result, log_dir)
    weights = final_weights(joint)
    result.tables["weights"] = weight_trajectory(joint)
    result.summary = {
        "spearman": index_weight_spearman(weights),
        "weight_sum": sum(weights.values()),
        "test_mse": problem.metric(joint.final_w, data.test),
        "stl_test_mse": problem.metric(stl.final_w, data.test),
    }
    return result


def run_poly_kernel(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    """Linear weights over a polynomial kernel of the losses on the illustrative task."""
    data = gen_illustrative(cfg.task, seed)
    problem = _regression_problem(cfg, data)
    result = ExperimentResult(summary={})
    joint = _train("auxilearn", _with_seed(cfg, seed), problem, data, result, log_dir)
    weights = final_weights(joint)
    result.tables["weights"] = weight_trajectory(joint)
    top = sorted(weights, key=weights.get, reverse=True)[:3]
    result.summary = {
        "test_mse": problem.metric(joint.final_w, data.test),
        **{f"weight[{k}]": v for k, v in weights.items()},
        "top_terms": ",".join(top),
    }
    return result


def run_labelgen_toy(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    """Student with generated auxiliary labels versus the student alone."""
    task, spec = cfg.task, cfg.model
    data = gen_toy_labelgen_task(seed=seed, task=task)
    n_main = task.n_main_classes
    problem = LabelGenProblem(
        StudentNet(task.dim, n_main, spec.M, spec.student_hidden),
        LabelGenerator(task.dim, n_main, spec.M, spec.generator_hidden, spec.masking),
        spec.aux_scale,
    )
    train = _with_seed(cfg, seed)
    result = ExperimentResult(summary={})
    joint = _train("auxilearn", train, problem, data, result, log_dir)
    stl = _train("stl", train.replace(outer_steps=0), problem, data, result, log_dir)
    test = data.test
    hard = problem.hard_aux_labels(joint.final_phi, test.x, test.y)
    within = [adjusted_rand(hard[test.y == c], test.latent[test.y == c]) for c in range(n_main)]
    result.tables["aux_labels"] = [
        {"index": i, "main_class": int(c), "latent": int(z), "aux_label": int(a)}
        for i, (c, z, a) in enumerate(zip(test.y, test.latent, hard))
    ]
    result.summary = {
        "test_accuracy": problem.metric(joint.final_w, test),
        "stl_test_accuracy": problem.metric(stl.final_w, test),
        "ari": adjusted_rand(hard, test.latent),
        "within_class_ari": float(np.mean(within)),
        "diverged_steps": int(sum(joint.column("diverged"))),
    }
    return result


def run_custom(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    """Joint versus main-only training on a configurable regression task and combiner."""
    gen = gen_noisy_aux if cfg.generator == "noisy-aux" else gen_illustrative
    data = gen(cfg.task, seed)
    problem = _regression_problem(cfg, data)
    train = _with_seed(cfg, seed)
    result = ExperimentResult(summary={})
    joint = _train("auxilearn", train, problem, data, result, log_dir)
    stl = _train("stl", train.replace(outer_steps=0), problem, data, result, log_dir)
    if problem.task_weights(joint.final_phi):
        result.tables["weights"] = weight_trajectory(joint)
    result.summary = {
        "test_mse": problem.metric(joint.final_w, data.test),
        "stl_test_mse": problem.metric(stl.final_w, data.test),
    }
    return result


RUNNERS: dict[str, Callable[..., ExperimentResult]] = {
    "illustrative": run_illustrative,
    "aux-on-train": run_aux_on_train,
    "noisy-aux": run_noisy_aux,
    "poly-kernel": run_poly_kernel,
    "labelgen-toy": run_labelgen_toy,
    "custom": run_custom,
}


def run_experiment(cfg: ExperimentConfig, seed: int, log_dir=None) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg, seed, log_dir)
