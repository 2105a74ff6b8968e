"""Fixed-size linear memories: gated (exponential), ungated (heavy tail) and refreshed."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import PreconditionError
from ..linear_attention import GLAParams, RecurrentState, readout, state_update
from .base import StreamMemory

LOGGER = logging.getLogger(__name__)


class GatedMemory(StreamMemory):
    """S_t = diag(gamma_t) S_{t-1} + k_t v_t^T."""

    name = "exponential"

    def __init__(self, key_dim: int, value_dim: int) -> None:
        super().__init__(key_dim, value_dim)
        self._params = GLAParams.bare(key_dim, value_dim)
        self.state = self._params.zero_state()

    def _gate(self, gamma: np.ndarray) -> np.ndarray:
        return gamma

    def step(self, key: np.ndarray, value: np.ndarray, gamma: np.ndarray) -> None:
        self.state = state_update(self.state, key, value, self._gate(gamma), self._params)
        self.steps += 1

    def read(self, key: np.ndarray) -> np.ndarray:
        return readout(key, self.state)

    def state_matrix(self) -> np.ndarray:
        return self.state.S[0]

    @property
    def state_bytes(self) -> int:
        return self.state.nbytes


class UngatedMemory(GatedMemory):
    """Plain accumulation; every write keeps weight 1 forever."""

    name = "heavy_tail"

    def _gate(self, gamma: np.ndarray) -> np.ndarray:
        return np.ones(self.key_dim)


class RefreshMemory(UngatedMemory):
    """Ungated accumulation that is zeroed every ``period`` writes."""

    name = "refresh"

    def __init__(self, key_dim: int, value_dim: int, period: int) -> None:
        if period < 1:
            raise PreconditionError(f"Refresh period must be positive, got {period}")
        super().__init__(key_dim, value_dim)
        self.period = period

    def step(self, key: np.ndarray, value: np.ndarray, gamma: np.ndarray) -> None:
        if self.steps and self.steps % self.period == 0:
            LOGGER.debug("Refreshing memory after %d writes", self.steps)
            self.state = RecurrentState.zeros(1, self.key_dim, self.value_dim)
        super().step(key, value, gamma)


__all__ = ["GatedMemory", "UngatedMemory", "RefreshMemory"]
