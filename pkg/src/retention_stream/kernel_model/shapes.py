"""Closed-form influence kernel families seen in streaming memories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError, PreconditionError
from .base import KernelShape


def _lags(horizon: int) -> np.ndarray:
    steps = np.arange(horizon)
    return steps[:, None] - steps[None, :]


def _check_horizon(horizon: int) -> None:
    if horizon < 1:
        raise PreconditionError(f"Horizon must be at least 1, got {horizon}")


@dataclass(frozen=True)
class Box(KernelShape):
    """Sliding-window hard cutoff: weight 1 iff t - i < window."""

    window: int
    name = "box"

    def __post_init__(self) -> None:
        if self.window < 1:
            raise PreconditionError(f"Box window must be positive, got {self.window}")

    def table(self, horizon: int) -> np.ndarray:
        _check_horizon(horizon)
        lags = _lags(horizon)
        return ((lags >= 0) & (lags < self.window)).astype(np.float64)


@dataclass(frozen=True)
class BlockRefresh(KernelShape):
    """Periodic refresh: weight 1 iff i and t share a block.

    Blocks are taken over 0-based storage indices, so with period 2 the 1-based
    blocks are {1, 2}, {3, 4}, ...
    """

    period: int
    name = "refresh"

    def __post_init__(self) -> None:
        if self.period < 1:
            raise PreconditionError(f"Refresh period must be positive, got {self.period}")

    def table(self, horizon: int) -> np.ndarray:
        _check_horizon(horizon)
        blocks = np.arange(horizon) // self.period
        same_block = blocks[:, None] == blocks[None, :]
        return (same_block & (_lags(horizon) >= 0)).astype(np.float64)


@dataclass(frozen=True)
class HeavyTail(KernelShape):
    """Ungated accumulation: every past step keeps weight 1."""

    name = "heavy_tail"

    def table(self, horizon: int) -> np.ndarray:
        _check_horizon(horizon)
        return np.tril(np.ones((horizon, horizon)))


@dataclass(frozen=True)
class SpikeSink(KernelShape):
    """Attention-sink shape: ``sink_mass`` on a fixed position, the rest uniform.

    ``sink_position`` is 1-based. Rows that cannot see the sink yet are uniform.
    """

    sink_position: int = 1
    sink_mass: float = 0.9
    name = "sink"

    def __post_init__(self) -> None:
        if self.sink_position < 1:
            raise PreconditionError(f"sink_position is 1-based, got {self.sink_position}")
        if not 0.0 <= self.sink_mass <= 1.0:
            raise DomainError(f"sink_mass must lie in [0, 1], got {self.sink_mass}")

    def table(self, horizon: int) -> np.ndarray:
        _check_horizon(horizon)
        causal = np.tril(np.ones((horizon, horizon)))
        counts = np.arange(1, horizon + 1, dtype=np.float64)[:, None]
        sees_sink = np.arange(1, horizon + 1) >= self.sink_position
        spread = np.where(sees_sink[:, None], 1.0 - self.sink_mass, 1.0)
        weights = causal * spread / counts
        if self.sink_position <= horizon:
            sink = self.sink_position - 1
            weights[sink:, sink] += self.sink_mass
        return weights


@dataclass(frozen=True)
class ExponentialChannelwise(KernelShape):
    """Learned retention: weight γ_c^(t-i) for one channel of a gate vector."""

    gammas: Sequence[float]
    channel: int = 0
    name = "exponential"

    def __post_init__(self) -> None:
        values = np.asarray(self.gammas, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise PreconditionError("gammas must be a non-empty vector")
        if np.any(values <= 0.0) or np.any(values >= 1.0):
            raise DomainError("Channel retention gammas must lie strictly inside (0, 1)")
        if not 0 <= self.channel < values.size:
            raise PreconditionError(f"channel {self.channel} outside 0..{values.size - 1}")
        object.__setattr__(self, "gammas", tuple(float(value) for value in values))

    @property
    def gamma(self) -> float:
        return self.gammas[self.channel]

    def table(self, horizon: int) -> np.ndarray:
        _check_horizon(horizon)
        lags = _lags(horizon)
        return np.where(lags >= 0, self.gamma ** np.clip(lags, 0, None), 0.0)


__all__ = ["Box", "BlockRefresh", "HeavyTail", "SpikeSink", "ExponentialChannelwise"]
