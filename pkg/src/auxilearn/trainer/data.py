"""Sample containers and the train / auxiliary / validation / test split."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from auxilearn.errors import ConfigurationError, ContractError


@dataclass
class Samples:
    """Features plus labels. ``aux`` holds given auxiliary labels (n, K);
    ``latent`` holds generator-side structure never shown to the learner."""

    x: np.ndarray
    y: np.ndarray
    aux: np.ndarray | None = None
    latent: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.x)
        for name in ("y", "aux", "latent"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ContractError(f"{name} has {len(arr)} rows, x has {n}")

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx) -> "Samples":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return Samples(self.x[idx], self.y[idx], pick(self.aux), pick(self.latent))

    @classmethod
    def empty_like(cls, other: "Samples") -> "Samples":
        return other.take(np.zeros(0, dtype=np.int64))


@dataclass
class SplitDataset:
    train: Samples
    auxiliary: Samples
    validation: Samples
    test: Samples
    indices: dict[str, np.ndarray] = field(default_factory=dict)

    def check_disjoint(self) -> None:
        seen: set[int] = set()
        for name, idx in self.indices.items():
            overlap = seen.intersection(idx.tolist())
            if overlap:
                raise ContractError(f"split {name!r} overlaps earlier splits at {sorted(overlap)[:5]}")
            seen.update(idx.tolist())


def _count(n: int, fraction: float) -> int:
    return int(round(fraction * n))


def split(
    data: Samples,
    aux_fraction: float,
    seed: int,
    stratify: bool = False,
    val_fraction: float = 0.0,
    test_fraction: float = 0.0,
) -> SplitDataset:
    """Deterministically carve auxiliary (and optional validation/test) splits out of a pool.

    With ``stratify`` every class contributes ``round(fraction * n_class)``
    samples (at least one) to the auxiliary split.
    """
    if not 0.0 < aux_fraction < 1.0:
        raise ConfigurationError("aux_fraction must be in (0, 1)")
    if val_fraction < 0 or test_fraction < 0 or aux_fraction + val_fraction + test_fraction >= 1.0:
        raise ConfigurationError("split fractions must be nonnegative and sum below 1")
    n = len(data)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if stratify:
        labels = np.asarray(data.y)
        aux_idx = []
        for cls in np.unique(labels):
            members = perm[labels[perm] == cls]
            k = max(1, _count(len(members), aux_fraction))
            if len(members) < k + 1:
                raise ConfigurationError(
                    f"class {cls!r} has {len(members)} samples; need at least {k + 1} for a stratified split"
                )
            aux_idx.extend(members[:k].tolist())
        aux_idx = np.asarray(aux_idx, dtype=np.int64)
        rest = perm[~np.isin(perm, aux_idx)]
    else:
        k = _count(n, aux_fraction)
        if k < 1 or k >= n:
            raise ConfigurationError(f"aux_fraction {aux_fraction} of {n} samples leaves an empty split")
        aux_idx, rest = perm[:k], perm[k:]
    n_val, n_test = _count(n, val_fraction), _count(n, test_fraction)
    val_idx, test_idx = rest[:n_val], rest[n_val : n_val + n_test]
    train_idx = rest[n_val + n_test :]
    if len(train_idx) == 0:
        raise ConfigurationError("no samples left for training")
    indices = {
        "train": np.sort(train_idx),
        "auxiliary": np.sort(aux_idx),
        "validation": np.sort(val_idx),
        "test": np.sort(test_idx),
    }
    ds = SplitDataset(*(data.take(indices[k]) for k in ("train", "auxiliary", "validation", "test")), indices=indices)
    ds.check_disjoint()
    return ds


class BatchSampler:
    """Epoch-wise shuffled mini-batches; ``batch_size=None`` yields the full set in index order."""

    def __init__(self, n: int, batch_size: int | None, rng: np.random.Generator, shuffle: bool = True):
        if n < 1:
            raise ConfigurationError("cannot sample batches from an empty split")
        self.n = n
        self.batch_size = n if batch_size is None else min(batch_size, n)
        self.rng = rng
        self.shuffle = shuffle and self.batch_size < n
        self.order = np.arange(n)
        self.pos = n

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n) if self.shuffle else np.arange(self.n)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx

    def state_dict(self) -> dict:
        return {"order": self.order.tolist(), "pos": self.pos, "rng": self.rng.bit_generator.state}

    def load_state_dict(self, state: dict) -> None:
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.pos = int(state["pos"])
        self.rng.bit_generator.state = state["rng"]
