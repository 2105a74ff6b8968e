"""Key-value cache memories: a sliding window and a window with attention sinks."""
from __future__ import annotations

import numpy as np
from scipy.special import softmax

from ..errors import PreconditionError
from .base import StreamMemory


class WindowMemory(StreamMemory):
    """Ring buffer of the last ``window`` pairs read linearly: sum_i (q . k_i) v_i."""

    name = "box"

    def __init__(self, key_dim: int, value_dim: int, window: int) -> None:
        if window < 1:
            raise PreconditionError(f"Window must be positive, got {window}")
        super().__init__(key_dim, value_dim)
        self.window = window
        self._keys = np.zeros((window, key_dim))
        self._values = np.zeros((window, value_dim))

    def step(self, key: np.ndarray, value: np.ndarray, gamma: np.ndarray) -> None:
        slot = self.steps % self.window
        self._keys[slot] = key
        self._values[slot] = value
        self.steps += 1

    def _held(self) -> tuple[np.ndarray, np.ndarray]:
        count = min(self.steps, self.window)
        return self._keys[:count], self._values[:count]

    def read(self, key: np.ndarray) -> np.ndarray:
        keys, values = self._held()
        return (keys @ key) @ values

    def state_matrix(self) -> np.ndarray:
        keys, values = self._held()
        return keys.T @ values

    @property
    def state_bytes(self) -> int:
        return int(self._keys.nbytes + self._values.nbytes)


class SinkMemory(WindowMemory):
    """The first ``sink_tokens`` pairs plus a recent window, read with softmax attention."""

    name = "sink"

    def __init__(self, key_dim: int, value_dim: int, window: int, sink_tokens: int) -> None:
        super().__init__(key_dim, value_dim, window)
        self.sink_tokens = sink_tokens
        self._sink_keys = np.zeros((sink_tokens, key_dim))
        self._sink_values = np.zeros((sink_tokens, value_dim))

    def step(self, key: np.ndarray, value: np.ndarray, gamma: np.ndarray) -> None:
        if self.steps < self.sink_tokens:
            self._sink_keys[self.steps] = key
            self._sink_values[self.steps] = value
            self.steps += 1
            return
        slot = (self.steps - self.sink_tokens) % self.window
        self._keys[slot] = key
        self._values[slot] = value
        self.steps += 1

    def _held(self) -> tuple[np.ndarray, np.ndarray]:
        sinks = min(self.steps, self.sink_tokens)
        recent = min(max(self.steps - self.sink_tokens, 0), self.window)
        keys = np.concatenate((self._sink_keys[:sinks], self._keys[:recent]))
        values = np.concatenate((self._sink_values[:sinks], self._values[:recent]))
        return keys, values

    def read(self, key: np.ndarray) -> np.ndarray:
        keys, values = self._held()
        if not len(keys):
            return np.zeros(self.value_dim)
        weights = softmax(keys @ key / np.sqrt(self.key_dim))
        return weights @ values

    @property
    def state_bytes(self) -> int:
        return super().state_bytes + int(self._sink_keys.nbytes + self._sink_values.nbytes)


__all__ = ["WindowMemory", "SinkMemory"]
