"""Seeded synthetic task generators. Every generator is a pure function of (task, seed)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from auxilearn.errors import ConfigurationError
from auxilearn.trainer.data import Samples, SplitDataset, split


def _pool_split(pool: Samples, n_aux: int, n_val: int, test: Samples, seed: int) -> SplitDataset:
    """Carve auxiliary and validation sets out of the pool; attach an independent test set."""
    n = len(pool)
    ds = split(pool, n_aux / n, seed, val_fraction=n_val / n)
    return SplitDataset(ds.train, ds.auxiliary, ds.validation, test, ds.indices)


@dataclass(frozen=True)
class IllustrativeTask:
    """Shared linear regression with one helpful and one harmful auxiliary."""

    w_star: tuple[float, float] = (1.0, 1.0)
    w_tilde: tuple[float, float] = (2.0, -4.0)
    sigma_main: float = 1.0
    sigma_aux: float = 0.3
    n_train: int = 20
    n_aux: int = 10
    n_val: int = 0
    n_test: int = 1000

    def __post_init__(self):
        if self.sigma_main < 0 or self.sigma_aux < 0:
            raise ConfigurationError("noise scales must be nonnegative")
        if self.sigma_main < self.sigma_aux or (self.sigma_main == self.sigma_aux and self.sigma_main > 0):
            raise ConfigurationError("the main task must be noisier than the auxiliaries")
        if min(self.n_train, self.n_aux, self.n_test) < 1 or self.n_val < 0:
            raise ConfigurationError("sample counts must be positive")

    def sample(self, n: int, rng: np.random.Generator) -> Samples:
        x = rng.standard_normal((n, 2))
        eps = rng.standard_normal((n, 3))
        w_star, w_tilde = np.asarray(self.w_star), np.asarray(self.w_tilde)
        y = x @ w_star + self.sigma_main * eps[:, 0]
        aux = np.stack([x @ w_star + self.sigma_aux * eps[:, 1], x @ w_tilde + self.sigma_aux * eps[:, 2]], axis=1)
        return Samples(x, y, aux)


def gen_illustrative(task: IllustrativeTask, seed: int) -> SplitDataset:
    rng_pool, rng_test = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    pool = task.sample(task.n_train + task.n_aux + task.n_val, rng_pool)
    return _pool_split(pool, task.n_aux, task.n_val, task.sample(task.n_test, rng_test), seed)


@dataclass(frozen=True)
class NoisyAuxTask:
    """K auxiliaries y_j = w.x + |e_j| with e_j ~ N(0, j * sigma_aux^2)."""

    K: int = 100
    dim: int = 2
    sigma: float = 1.0
    sigma_aux: float = 0.1
    n_train: int = 100
    n_aux: int = 50
    n_val: int = 0
    n_test: int = 1000

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.sigma_aux <= 0 or self.sigma < 0:
            raise ConfigurationError("sigma_aux must be positive and sigma nonnegative")
        if min(self.dim, self.n_train, self.n_aux, self.n_test) < 1 or self.n_val < 0:
            raise ConfigurationError("sizes must be positive")

    @property
    def noise_std(self) -> np.ndarray:
        return self.sigma_aux * np.sqrt(np.arange(1, self.K + 1))

    def sample(self, n: int, w: np.ndarray, rng: np.random.Generator) -> Samples:
        x = rng.standard_normal((n, self.dim))
        clean = x @ w
        y = clean + self.sigma * rng.standard_normal(n)
        aux = clean[:, None] + np.abs(rng.standard_normal((n, self.K)) * self.noise_std)
        return Samples(x, y, aux)


def gen_noisy_aux(task: NoisyAuxTask, seed: int) -> SplitDataset:
    rng_w, rng_pool, rng_test = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    w = rng_w.standard_normal(task.dim)
    pool = task.sample(task.n_train + task.n_aux + task.n_val, w, rng_pool)
    return _pool_split(pool, task.n_aux, task.n_val, task.sample(task.n_test, w, rng_test), seed)


@dataclass(frozen=True)
class SubclassTask:
    """Gaussian mixture: each main class is a union of latent subclasses."""

    n_main_classes: int = 3
    subclasses_per_class: int = 3
    dim: int = 10
    separation: float = 1.5
    n_pool: int = 2000
    train_fraction: float = 0.05
    aux_share: float = 0.2
    n_test: int = 2000

    def __post_init__(self):
        if self.subclasses_per_class < 2:
            raise ConfigurationError("need at least 2 subclasses per main class")
        if self.n_main_classes < 2:
            raise ConfigurationError("need at least 2 main classes")
        if not 0 < self.train_fraction <= 1 or not 0 < self.aux_share < 1:
            raise ConfigurationError("fractions must lie in (0, 1]")

    @property
    def n_subclasses(self) -> int:
        return self.n_main_classes * self.subclasses_per_class

    def means(self, rng: np.random.Generator) -> np.ndarray:
        return self.separation * rng.standard_normal((self.n_subclasses, self.dim))

    def sample(self, n: int, means: np.ndarray, rng: np.random.Generator) -> Samples:
        sub = rng.integers(0, self.n_subclasses, size=n)
        x = means[sub] + rng.standard_normal((n, self.dim))
        return Samples(x, sub // self.subclasses_per_class, latent=sub)


def gen_toy_labelgen_task(
    n_main_classes: int = 3,
    subclasses_per_class: int = 3,
    n_train: int | None = None,
    seed: int = 0,
    task: SubclassTask | None = None,
) -> SplitDataset:
    """Low-data split of a subclass mixture; the auxiliary set is a stratified share of the training data."""
    task = task or SubclassTask(n_main_classes, subclasses_per_class)
    rng_means, rng_pool, rng_test = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    means = task.means(rng_means)
    n = n_train if n_train is not None else int(round(task.train_fraction * task.n_pool))
    pool = task.sample(n, means, rng_pool)
    ds = split(pool, task.aux_share, seed, stratify=True)
    return SplitDataset(ds.train, ds.auxiliary, ds.validation, task.sample(task.n_test, means, rng_test), ds.indices)
