"""Record types shared by the analysis, scenario and reporting layers."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

# Bounds are exact inequalities; only float rounding may intrude.
BOUND_TOLERANCE = 1e-12


@dataclass(frozen=True, slots=True)
class StreamRecord:
    """One emitted measurement row of a scenario run."""

    t: int
    out_norm: float
    state_fro: float
    bound_margin: float
    relevant_mass: Optional[float]
    step_ns: int
    state_bytes: int


@dataclass(frozen=True)
class BoundReport:
    """Outcome of one executable bound check.

    ``max_violation`` is relative: values at or below ``tolerance`` pass.
    """

    name: str
    samples: int
    max_violation: float
    per_step_margin: tuple[float, ...] = ()
    tolerance: float = BOUND_TOLERANCE
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_violation) and self.max_violation <= self.tolerance

    def to_dict(self, include_margins: bool = True) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "name": self.name,
            "samples": self.samples,
            "max_violation": _json_float(self.max_violation),
            "pass": self.passed,
        }
        if include_margins and self.per_step_margin:
            payload["per_step_margin"] = [_json_float(value) for value in self.per_step_margin]
        if self.details:
            payload["details"] = {key: to_jsonable(value) for key, value in self.details.items()}
        return payload


@dataclass(frozen=True)
class RetentionSpectrum:
    """Per-layer, per-channel empirical mean gates and their horizons."""

    gamma_bar: tuple[np.ndarray, ...]
    tau: tuple[np.ndarray, ...]

    @property
    def layers(self) -> int:
        return len(self.gamma_bar)

    def rows(self) -> list[tuple[int, int, float, float]]:
        return [
            (layer, channel, float(gamma), float(tau))
            for layer, (gammas, taus) in enumerate(zip(self.gamma_bar, self.tau))
            for channel, (gamma, tau) in enumerate(zip(gammas, taus))
        ]

    def histogram(self, bins: int | Sequence[float] = 10) -> tuple[np.ndarray, np.ndarray]:
        """Histogram of log10(τ) over all layers and channels."""

        values = np.log10(np.concatenate(self.tau))
        return np.histogram(values, bins=bins)


@dataclass(frozen=True)
class ProbeResult:
    """Ridge probe fit in original feature units plus held-out quality."""

    weights: np.ndarray
    intercept: float
    r_squared: float
    band_attribution: Mapping[str, float]
    train_size: int = 0
    test_size: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": [float(value) for value in self.weights],
            "intercept": float(self.intercept),
            "r_squared": float(self.r_squared),
            "band_attribution": {band: float(share) for band, share in self.band_attribution.items()},
            "train_size": self.train_size,
            "test_size": self.test_size,
        }


@dataclass(frozen=True, slots=True)
class DilutionRow:
    t: int
    bound: float
    measured_mass: float
    violated: bool


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted composite loss and its unweighted terms."""

    pose: float
    depth: float
    scale: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return {"pose": self.pose, "depth": self.depth, "scale": self.scale, "total": self.total}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _json_float(value: float) -> float | str:
    value = float(value)
    if math.isfinite(value):
        return value
    return "inf" if value > 0 else ("-inf" if value < 0 else "nan")


def to_jsonable(value: Any) -> Any:
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        return _json_float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return [to_jsonable(item) for item in value.tolist()]
    if isinstance(value, Mapping):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    return value


__all__ = [
    "BOUND_TOLERANCE",
    "StreamRecord",
    "BoundReport",
    "RetentionSpectrum",
    "ProbeResult",
    "DilutionRow",
    "LossBreakdown",
    "to_jsonable",
]
