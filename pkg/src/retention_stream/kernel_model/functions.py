"""Closed-form kernel evaluations, horizons, channel partitions and composition."""
from __future__ import annotations

import math
from numbers import Integral
from typing import Sequence

import numpy as np

from ..errors import DomainError, PreconditionError, ShapeMismatchError
from .base import KernelProfile, KernelShape


def _check_open_unit(gamma: float, label: str = "gamma_c") -> float:
    value = float(gamma)
    if not 0.0 < value < 1.0:
        raise DomainError(f"{label} must lie strictly inside (0, 1), got {gamma}")
    return value


def eval_time_kernel(gammas_per_step: Sequence[float], t: int, i: int) -> float:
    """K_time(t, i) = prod_{j=i+1}^{t} gamma_j with 1-based t, i.

    ``gammas_per_step[j - 1]`` holds gamma_j.
    """

    gammas = [float(value) for value in gammas_per_step]
    if not 1 <= i <= t <= len(gammas):
        raise PreconditionError(
            f"Need 1 <= i <= t <= {len(gammas)}, got t={t}, i={i}"
        )
    window = gammas[i:t]
    if any(not 0.0 < value <= 1.0 for value in window):
        raise DomainError("Per-step retention factors must lie in (0, 1]")
    return math.prod(window)


def eval_channel_kernel(gamma_c: float, lag: float) -> float:
    """Weight gamma_c**lag = exp(-lag / tau) of one channel.

    Integer lags are evaluated as the same left-to-right product used by
    :func:`eval_time_kernel`, so both agree bit-for-bit for constant gates.
    Real-valued lags use the continuous extension.
    """

    gamma = _check_open_unit(gamma_c)
    if lag < 0:
        raise PreconditionError(f"lag must be nonnegative, got {lag}")
    if isinstance(lag, Integral):
        return math.prod([gamma] * int(lag))
    return math.exp(float(lag) * math.log(gamma))


def effective_horizon(gamma_c: float) -> float:
    """tau = -1 / log(gamma_c); gamma_c = 1 has no finite horizon and is rejected."""

    gamma = _check_open_unit(gamma_c)
    return -1.0 / math.log(gamma)


def gamma_for_horizon(tau: float) -> float:
    """Inverse of :func:`effective_horizon`."""

    if not tau > 0 or not math.isfinite(tau):
        raise DomainError(f"tau must be positive and finite, got {tau}")
    return math.exp(-1.0 / tau)


def partition_channels(
    gammas: Sequence[float], threshold: float
) -> tuple[frozenset[int], frozenset[int]]:
    """Split channels into fast (gamma < threshold) and slow (gamma >= threshold)."""

    values = np.asarray(gammas, dtype=np.float64).ravel()
    _check_open_unit(threshold, "threshold")
    if np.any(values <= 0.0) or np.any(values >= 1.0):
        raise DomainError("All channel gammas must lie strictly inside (0, 1)")
    fast = values < threshold
    return (
        frozenset(int(c) for c in np.flatnonzero(fast)),
        frozenset(int(c) for c in np.flatnonzero(~fast)),
    )


def compose_kernel(spatial: KernelProfile, time: KernelProfile) -> KernelProfile:
    """Entrywise product K = K_spatial * K_time."""

    if spatial.horizon != time.horizon:
        raise ShapeMismatchError(
            f"Cannot compose kernels with horizons {spatial.horizon} and {time.horizon}"
        )
    return KernelProfile(spatial.weights * time.weights)


def build_profile(shape: KernelShape, horizon: int) -> KernelProfile:
    """Materialise a shape family as a causal table."""

    if horizon < 1:
        raise PreconditionError(f"Horizon must be at least 1, got {horizon}")
    return KernelProfile(shape.table(horizon))


def ones_profile(horizon: int) -> KernelProfile:
    """The all-ones causal table, the identity factor for composition."""

    return KernelProfile(np.tril(np.ones((horizon, horizon))))


__all__ = [
    "eval_time_kernel",
    "eval_channel_kernel",
    "effective_horizon",
    "gamma_for_horizon",
    "partition_channels",
    "compose_kernel",
    "build_profile",
    "ones_profile",
]
