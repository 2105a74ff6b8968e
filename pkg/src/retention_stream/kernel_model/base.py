"""Base types for evidence influence kernels.

Formulas index steps from 1; tables store row ``t-1`` / column ``i-1``.
"""
from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PreconditionError, ShapeMismatchError


class KernelShape(ABC):
    """A closed-form influence kernel family."""

    name: str = "kernel"

    @abstractmethod
    def table(self, horizon: int) -> np.ndarray:
        """Return the causal ``horizon x horizon`` weight table (0-based storage)."""


@dataclass(frozen=True, eq=False)
class KernelProfile:
    """A causal, nonnegative ``T x T`` table K(t, i)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise ShapeMismatchError(f"Kernel table must be square, got shape {weights.shape}")
        if weights.shape[0] < 1:
            raise PreconditionError("Kernel horizon must be at least 1")
        if np.any(np.triu(weights, k=1) != 0.0):
            raise PreconditionError("Kernel table is not causal: found weight on i > t")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise PreconditionError("Kernel weights must be finite and nonnegative")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def horizon(self) -> int:
        return int(self.weights.shape[0])

    def at(self, t: int, i: int) -> float:
        """Read K(t, i) using 1-based formula indices; entries with i > t are 0."""

        if not (1 <= t <= self.horizon and 1 <= i <= self.horizon):
            raise PreconditionError(f"Index ({t}, {i}) outside 1..{self.horizon}")
        return float(self.weights[t - 1, i - 1])

    def row_mass(self, t: int) -> float:
        return float(self.weights[t - 1].sum())

    def write_csv(self, path: str | Path) -> Path:
        """Write ``t,i,weight`` rows for every nonzero causal entry (1-based indices)."""

        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        rows, cols = np.nonzero(self.weights)
        with target.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", "i", "weight"])
            for row, col in zip(rows, cols):
                writer.writerow([row + 1, col + 1, format(float(self.weights[row, col]), ".17g")])
        return target


__all__ = ["KernelShape", "KernelProfile"]
