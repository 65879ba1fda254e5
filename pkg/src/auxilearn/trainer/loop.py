"""The alternating bi-level loop: N inner steps on W, then one hypergradient step on phi."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from auxilearn.autodiff import DualGraph, ParamSet, grad
from auxilearn.hypergrad import estimate_alpha, neumann_hypergrad
from auxilearn.trainer.checkpoint import load_checkpoint, save_checkpoint
from auxilearn.trainer.config import TrainConfig
from auxilearn.trainer.data import BatchSampler, Samples, SplitDataset
from auxilearn.trainer.optim import Optimizer
from auxilearn.trainer.problems import Problem


@dataclass
class RunRecord:
    """One row per round (``inner_steps`` W updates followed by at most one phi update)."""

    rows: list[dict] = field(default_factory=list)
    final_w: ParamSet | None = None
    final_phi: ParamSet | None = None
    best_w: ParamSet | None = None
    best_phi: ParamSet | None = None
    best_round: int | None = None
    stopped_early: bool = False

    def column(self, key: str) -> list:
        return [row[key] for row in self.rows]

    @property
    def n_outer(self) -> int:
        return sum(1 for row in self.rows if row["outer_step"] is not None)


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


class Trainer:
    """Holds W, phi, optimizer states and samplers; ``fit`` drives the loop."""

    def __init__(
        self,
        config: TrainConfig,
        problem: Problem,
        data: SplitDataset,
        w: ParamSet | None = None,
        phi: ParamSet | None = None,
    ):
        self.config = config
        self.problem = problem
        self.data = data
        rng_w, rng_phi, rng_train, rng_aux = _streams(config.seed)
        self.w = w.copy() if w is not None else problem.init_w(rng_w)
        self.phi = phi.copy() if phi is not None else problem.init_phi(rng_phi)
        if config.monotone:
            self.phi = problem.project(self.phi)
        self.opt_w = Optimizer(config.optimizer_w, self.w)
        self.opt_phi = Optimizer(config.optimizer_phi, self.phi)
        self.train_sampler = BatchSampler(len(data.train), config.batch_size, rng_train)
        aux_pool = data.train if config.aux_on_train else data.auxiliary
        self.aux_sampler = BatchSampler(len(aux_pool), config.aux_batch_size, rng_aux, shuffle=False)
        self.alpha: float | None = None if config.hypergrad.alpha == "auto" else float(config.hypergrad.alpha)
        self.inner_count = 0
        self.outer_count = 0
        self.last_train_loss = float("nan")

    # -- graph plumbing ------------------------------------------------------

    def _bind(self):
        graph = DualGraph()
        return graph, graph.bind(self.w), graph.bind(self.phi)

    @property
    def use_aux(self) -> bool:
        return not self.config.single_task

    # -- steps ---------------------------------------------------------------

    def inner_step(self) -> float:
        """One optimizer step on W against L_T; phi is untouched."""
        batch = self.data.train.take(self.train_sampler.next())
        graph, wn, pn = self._bind()
        loss = self.problem.train_loss(wn, pn, batch, self.use_aux)
        g = grad(graph, loss, self.w)
        self.w = self.opt_w.step(self.w, g)
        self.inner_count += 1
        self.last_train_loss = float(loss.value)
        return self.last_train_loss

    def aux_batch(self) -> Samples:
        pool = self.data.train if self.config.aux_on_train else self.data.auxiliary
        return pool.take(self.aux_sampler.next())

    def outer_step(self) -> dict:
        """One hypergradient step on phi; W is untouched. Returns diagnostics."""
        cfg = self.config
        train_batch = self.data.train.take(self.train_sampler.next())
        aux_batch = self.aux_batch()
        graph, wn, pn = self._bind()
        L_T = self.problem.train_loss(wn, pn, train_batch, True)
        L_A = self.problem.main_loss(wn, aux_batch)
        if self.alpha is None or cfg.reestimate_alpha:
            hc = cfg.hypergrad
            self.alpha = estimate_alpha(L_T, self.w, hc.power_iters, hc.alpha_scale)
        report = neumann_hypergrad(L_A, L_T, self.phi, self.w, cfg.hypergrad.with_alpha(self.alpha))
        info = {
            "aux_loss": float(L_A.value),
            "alpha": float(self.alpha),
            "diverged": report.diverged,
            "hypergrad_norm": report.norm,
        }
        if report.diverged:
            if cfg.halve_alpha_on_divergence:
                self.alpha *= 0.5
        else:
            g = self.phi.unflatten(report.grad_phi)
            self.phi = self.opt_phi.step(self.phi, g)
            if cfg.monotone:
                self.phi = self.problem.project(self.phi)
        self.outer_count += 1
        return info

    def run_round(self) -> dict:
        cfg = self.config
        for _ in range(cfg.inner_steps):
            self.inner_step()
        row = {
            "round": self.inner_count // cfg.inner_steps,
            "inner_step": self.inner_count,
            "train_loss": self.last_train_loss,
            "outer_step": None,
            "aux_loss": None,
            "alpha": None,
            "diverged": False,
            "hypergrad_norm": None,
        }
        cap = cfg.outer_steps
        if cfg.updates_phi and (cap is None or self.outer_count < cap):
            row.update(self.outer_step())
            row["outer_step"] = self.outer_count
        return row

    # -- checkpoints ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "w": self.w.to_json(),
            "phi": self.phi.to_json(),
            "opt_w": self.opt_w.state_dict(),
            "opt_phi": self.opt_phi.state_dict(),
            "train_sampler": self.train_sampler.state_dict(),
            "aux_sampler": self.aux_sampler.state_dict(),
            "alpha": self.alpha,
            "inner_count": self.inner_count,
            "outer_count": self.outer_count,
            "last_train_loss": self.last_train_loss,
        }

    def load_state_dict(self, state: dict) -> None:
        self.w = ParamSet.from_json(state["w"])
        self.phi = ParamSet.from_json(state["phi"])
        self.opt_w.load_state_dict(state["opt_w"])
        self.opt_phi.load_state_dict(state["opt_phi"])
        self.train_sampler.load_state_dict(state["train_sampler"])
        self.aux_sampler.load_state_dict(state["aux_sampler"])
        self.alpha = state["alpha"]
        self.inner_count = int(state["inner_count"])
        self.outer_count = int(state["outer_count"])
        self.last_train_loss = float(state["last_train_loss"])

    def save(self, path) -> None:
        save_checkpoint(path, {"trainer": self.state_dict()})

    def load(self, path) -> None:
        self.load_state_dict(load_checkpoint(path)["trainer"])

    # -- driver --------------------------------------------------------------

    def fit(self, log_path: str | Path | None = None) -> RunRecord:
        """Run rounds until ``train_steps`` inner steps are spent or validation stalls."""
        cfg = self.config
        record = RunRecord()
        has_val = len(self.data.validation) > 0
        better = (lambda a, b: a > b) if self.problem.metric_mode == "max" else (lambda a, b: a < b)
        best = None
        stale = 0
        log = open(log_path, "w") if log_path is not None else None
        try:
            while self.inner_count + cfg.inner_steps <= cfg.train_steps:
                row = self.run_round()
                row["val_metric"] = self.problem.metric(self.w, self.data.validation) if has_val else None
                row["weights"] = self.problem.task_weights(self.phi)
                record.rows.append(row)
                if log is not None:
                    log.write(json.dumps(row, sort_keys=True) + "\n")
                    log.flush()
                if has_val:
                    if best is None or better(row["val_metric"], best):
                        best, stale = row["val_metric"], 0
                        record.best_w, record.best_phi, record.best_round = self.w.copy(), self.phi.copy(), row["round"]
                    else:
                        stale += 1
                        if stale >= cfg.patience:
                            record.stopped_early = True
                            break
        finally:
            if log is not None:
                log.close()
        record.final_w, record.final_phi = self.w.copy(), self.phi.copy()
        if record.best_w is None:
            record.best_w, record.best_phi = record.final_w, record.final_phi
            record.best_round = record.rows[-1]["round"] if record.rows else None
        return record


def fit(
    config: TrainConfig,
    data: SplitDataset,
    problem: Problem,
    phi: ParamSet | None = None,
    log_path=None,
) -> RunRecord:
    return Trainer(config, problem, data, phi=phi).fit(log_path)
