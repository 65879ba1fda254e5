"""Named, shaped parameter collections with a fixed flattening order."""
from __future__ import annotations

from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from auxilearn.autodiff.graph import as_float64
from auxilearn.errors import ContractError


class ParamSet:
    """Ordered ``name -> float64 array`` mapping.

    Flattening concatenates raveled entries in insertion order, so
    ``unflatten(flatten())`` is the identity.
    """

    def __init__(self, entries: Mapping | Iterable[tuple[str, object]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, np.ndarray] = {}
        for name, value in items:
            if name in self._entries:
                raise ContractError(f"duplicate parameter name {name!r}")
            self._entries[name] = as_float64(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self):
        body = ", ".join(f"{k}{list(v.shape)}" for k, v in self._entries.items())
        return f"ParamSet({body})"

    def items(self):
        return self._entries.items()

    @property
    def names(self) -> list[str]:
        return list(self._entries)

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._entries.values()])

    def unflatten(self, vec) -> "ParamSet":
        vec = as_float64(vec).ravel()
        if vec.size != self.size:
            raise ContractError(f"vector of length {vec.size} does not match ParamSet size {self.size}")
        out, start = [], 0
        for name, value in self._entries.items():
            stop = start + value.size
            out.append((name, vec[start:stop].reshape(value.shape)))
            start = stop
        return ParamSet(out)

    def copy(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self._entries.items())

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet((k, fn(k, v)) for k, v in self._entries.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((k, np.zeros_like(v)) for k, v in self._entries.items())

    def replace(self, **updates) -> "ParamSet":
        unknown = set(updates) - set(self._entries)
        if unknown:
            raise ContractError(f"unknown parameters {sorted(unknown)}")
        return ParamSet((k, updates.get(k, v)) for k, v in self._entries.items())

    def subset(self, names: Iterable[str]) -> "ParamSet":
        return ParamSet((k, self._entries[k]) for k in names)

    def merged(self, other: "ParamSet") -> "ParamSet":
        return ParamSet(list(self.items()) + list(other.items()))

    def equal(self, other: "ParamSet") -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names != other.names:
            return False
        return all(np.array_equal(v, other[k]) for k, v in self._entries.items())

    def to_json(self) -> dict:
        return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self._entries.items()}

    @classmethod
    def from_json(cls, payload: Mapping) -> "ParamSet":
        return cls(
            (k, np.asarray(e["data"], dtype=np.float64).reshape(e["shape"])) for k, e in payload.items()
        )
