"""Base class for streaming memories that realise one influence-kernel shape."""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np


class StreamMemory(ABC):
    """A causal key-value memory written once per step and read by key."""

    name: str = "memory"

    def __init__(self, key_dim: int, value_dim: int) -> None:
        self.key_dim = key_dim
        self.value_dim = value_dim
        self.steps = 0

    @abstractmethod
    def step(self, key: np.ndarray, value: np.ndarray, gamma: np.ndarray) -> None:
        """Write one (key, value) pair; ``gamma`` is the step's channel gate."""

    @abstractmethod
    def read(self, key: np.ndarray) -> np.ndarray:
        """Return the value the memory associates with ``key``."""

    @abstractmethod
    def state_matrix(self) -> np.ndarray:
        """Equivalent ``key_dim x value_dim`` state, used for norm tracking."""

    @property
    @abstractmethod
    def state_bytes(self) -> int:
        """Bytes held by the memory, allocated or not."""

    @property
    def state_fro(self) -> float:
        return float(np.linalg.norm(self.state_matrix()))


__all__ = ["StreamMemory"]
