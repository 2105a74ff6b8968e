"""Scenario configuration loading.

Settings are layered: dataclass defaults, then a flat ``key = value`` file, then
``RETENTION_STREAM_<KEY>`` environment variables, then command-line overrides.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

ENV_PREFIX = "RETENTION_STREAM_"
CONFIG_FILE_ENV = "RETENTION_STREAM_CONFIG"

SHAPE_NAMES = ("exponential", "heavy_tail", "refresh", "box", "sink")
PRECISIONS = ("f64", "f32")
DEFAULT_WINDOW = 10
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _resolve_config_file(candidate: str | os.PathLike[str]) -> Path:
    """Return the config file path; relative names resolve against the working directory."""

    path = Path(candidate).expanduser()
    if not path.is_absolute():
        path = Path.cwd() / path
    if not path.is_file():
        raise ConfigError(f"Config file not found: {candidate}")
    return path


def parse_config_file(path: Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into a mapping of raw strings."""

    variables: dict[str, str] = {}
    for number, raw_line in enumerate(path.read_text().splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower().replace("-", "_")
        value = value.split(" #", 1)[0].strip().strip('"').strip("'")
        variables[key] = value
    return variables


def _env_overrides(env: Mapping[str, str]) -> dict[str, str]:
    known = {field.name for field in fields(ScenarioConfig)}
    overrides: dict[str, str] = {}
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX) or name == CONFIG_FILE_ENV:
            continue
        key = name[len(ENV_PREFIX) :].lower()
        if key in known:
            overrides[key] = value
    return overrides


def _coerce(name: str, kind: type, value: Any) -> Any:
    if not isinstance(value, str):
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if kind is float and isinstance(value, float):
            return value
        if isinstance(value, kind):
            return value
        value = str(value)
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value.replace("_", ""))
        if kind is float:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"Invalid value for {name}: {value!r} (expected {kind.__name__})") from exc
    return value


@dataclass(frozen=True)
class ScenarioConfig:
    """Runtime configuration for scenario runs, kernel comparisons and the verification suite."""

    stream_length: int = 10000
    chunk_size: int = 21
    window: int = DEFAULT_WINDOW
    d_model: int = 32
    key_dim: int = 32
    value_dim: int = 16
    heads: int = 2
    w_geo: int = 4
    score_bound: float = 1.0
    shape: str = "exponential"
    gate_bias: float = 4.0
    init_scale: float = 0.1
    eta: float = 0.5
    value_rule: str = "plain"
    feature_map: str = "identity"
    seed: int = 0
    out_dir: str = "runs/default"
    precision: str = "f64"
    measure_dilution: bool = False
    inline_timing: bool = False
    snapshot_every_chunk: bool = True
    warmup_steps: int = 100
    probe_lambda: float = 1.0
    sink_tokens: int = 4
    verify_bound_steps: int = 100000
    verify_trials: int = 1000
    verify_gradient_instances: int = 100
    verify_dilution_tmax: int = 5000

    def __post_init__(self) -> None:
        positive = (
            "stream_length",
            "chunk_size",
            "window",
            "sink_tokens",
            "d_model",
            "key_dim",
            "value_dim",
            "heads",
            "w_geo",
            "verify_bound_steps",
            "verify_trials",
            "verify_gradient_instances",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.chunk_size < self.window:
            raise ConfigError(
                f"chunk_size ({self.chunk_size}) must be at least window ({self.window})"
            )
        if self.score_bound <= 0:
            raise ConfigError(f"score_bound must be positive, got {self.score_bound}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.shape not in SHAPE_NAMES:
            raise ConfigError(f"Unknown shape {self.shape!r}; expected one of {', '.join(SHAPE_NAMES)}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.value_rule not in ("plain", "delta"):
            raise ConfigError(f"value_rule must be 'plain' or 'delta', got {self.value_rule!r}")
        if self.feature_map not in ("identity", "shifted_exp"):
            raise ConfigError(
                f"feature_map must be 'identity' or 'shifted_exp', got {self.feature_map!r}"
            )
        if self.verify_dilution_tmax <= self.w_geo:
            raise ConfigError("verify_dilution_tmax must exceed w_geo")
        if self.warmup_steps < 0 or self.probe_lambda < 0:
            raise ConfigError("warmup_steps and probe_lambda must be nonnegative")

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @staticmethod
    def load(
        path: str | os.PathLike[str] | None = None,
        overrides: Mapping[str, Any] | None = None,
        env: Mapping[str, str] | None = None,
    ) -> "ScenarioConfig":
        """Load a configuration from file, environment and explicit overrides."""

        base_env = dict(os.environ if env is None else env)
        candidate = path or base_env.get(CONFIG_FILE_ENV)
        file_values = parse_config_file(_resolve_config_file(candidate)) if candidate else {}

        # Shell environment wins over the file; command-line overrides win over both.
        merged: dict[str, Any] = {**file_values, **_env_overrides(base_env)}
        merged.update({key: value for key, value in (overrides or {}).items() if value is not None})

        kinds = {field.name: field.type for field in fields(ScenarioConfig)}
        unknown = sorted(set(merged) - set(kinds))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")

        types = {"int": int, "float": float, "bool": bool, "str": str}
        values = {
            key: _coerce(key, types[str(kinds[key])], value) for key, value in merged.items()
        }
        return ScenarioConfig(**values)


__all__ = ["ScenarioConfig", "parse_config_file", "SHAPE_NAMES", "PRECISIONS", "ENV_PREFIX"]
