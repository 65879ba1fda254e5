"""Loss landscapes, weight trajectories and summary statistics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import adjusted_rand_score

from auxilearn.autodiff import DualGraph, ParamSet
from auxilearn.combiner import Combiner
from auxilearn.errors import ContractError
from auxilearn.trainer.data import Samples
from auxilearn.trainer.loop import RunRecord


@dataclass
class LandscapeGrid:
    w1: np.ndarray
    w2: np.ndarray
    values: np.ndarray  # (len(w1), len(w2)), values[i, j] at (w1[i], w2[j])

    def __post_init__(self):
        if self.values.shape != (len(self.w1), len(self.w2)):
            raise ContractError(f"values shape {self.values.shape} != grid shape {(len(self.w1), len(self.w2))}")

    def argmin(self) -> np.ndarray:
        i, j = np.unravel_index(np.argmin(self.values), self.values.shape)
        return np.array([self.w1[i], self.w2[j]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["w1", "w2", "loss"])
        for i, a in enumerate(self.w1):
            for j, b in enumerate(self.w2):
                writer.writerow([repr(float(a)), repr(float(b)), repr(float(self.values[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LandscapeGrid":
        rows = list(csv.DictReader(io.StringIO(text)))
        w1 = np.array(sorted({float(r["w1"]) for r in rows}))
        w2 = np.array(sorted({float(r["w2"]) for r in rows}))
        values = np.full((len(w1), len(w2)), np.nan)
        pos1 = {v: i for i, v in enumerate(w1)}
        pos2 = {v: j for j, v in enumerate(w2)}
        for r in rows:
            values[pos1[float(r["w1"])], pos2[float(r["w2"])]] = float(r["loss"])
        return cls(w1, w2, values)


def grid_axes(lo: float = -1.0, hi: float = 3.0, n: int = 100) -> tuple[np.ndarray, np.ndarray]:
    axis = np.linspace(lo, hi, n)
    return axis, axis.copy()


def landscape(w_grid: tuple[np.ndarray, np.ndarray], phi: ParamSet | None, combiner: Combiner | None,
              data: Samples) -> LandscapeGrid:
    """Combined training loss of a bias-free 2-d linear model over a weight grid.

    ``phi=None`` gives the main-task loss alone.
    """
    w1, w2 = (np.asarray(a, dtype=np.float64) for a in w_grid)
    if data.x.shape[1] != 2:
        raise ContractError("landscapes need a 2-dimensional linear model")
    W = np.stack(np.meshgrid(w1, w2, indexing="ij"), axis=-1).reshape(-1, 2)  # (G, 2)
    pred = W @ data.x.T  # (G, B)
    main = (pred - data.y) ** 2
    if phi is None or combiner is None:
        return LandscapeGrid(w1, w2, main.mean(axis=1).reshape(len(w1), len(w2)))
    if data.aux is None or data.aux.shape[1] != combiner.n_aux:
        raise ContractError(f"data needs {combiner.n_aux} auxiliary label columns")
    aux = (pred[:, :, None] - data.aux[None]) ** 2
    losses = np.concatenate([main[:, :, None], aux], axis=2).reshape(-1, combiner.n_aux + 1)
    graph = DualGraph()
    with graph.no_record():
        nodes = {k: graph.constant(v) for k, v in phi.items()}
        g = combiner.g(nodes, graph.constant(losses)).value.reshape(main.shape)
    return LandscapeGrid(w1, w2, (main + g).mean(axis=1).reshape(len(w1), len(w2)))


def weight_trajectory(run: RunRecord) -> list[dict]:
    """Tidy (step, task, weight) rows, one per logged task weight per round."""
    if not run.rows or not run.rows[0].get("weights"):
        raise ContractError("run has no per-task weights; use a linear or poly_linear combiner")
    table = []
    for row in run.rows:
        step = row["outer_step"] if row["outer_step"] is not None else 0
        for task, weight in row["weights"].items():
            table.append({"round": row["round"], "step": step, "task": task, "weight": weight})
    return table


def final_weights(run: RunRecord) -> dict[str, float]:
    return dict(run.rows[-1]["weights"]) if run.rows else {}


def index_weight_spearman(weights: dict[str, float]) -> float:
    """Spearman correlation between task position (1..K) and weight."""
    values = np.asarray(list(weights.values()))
    if np.ptp(values) == 0:
        return 0.0
    return float(spearmanr(np.arange(1, len(values) + 1), values).statistic)


def adjusted_rand(labels_a, labels_b) -> float:
    return float(adjusted_rand_score(np.asarray(labels_a), np.asarray(labels_b)))


def mean_sem(values) -> tuple[float, float | None]:
    """Mean and standard error of the mean (sample SD / sqrt(n)); SEM is None for a single value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("no values to aggregate")
    if arr.size == 1:
        return float(arr[0]), None
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))
