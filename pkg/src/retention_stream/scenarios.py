"""Synthetic streams with planted relevance, long rollouts and kernel comparisons."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .analysis import extract_retention_spectrum, retention_bands, ridge_probe
from .config import SHAPE_NAMES, ScenarioConfig
from .errors import PreconditionError
from .kernel_model import KernelShape, build_profile
from .linear_attention import (
    GLAParams,
    RecurrentState,
    TokenSequence,
    chunk_sizes,
    gate,
    iter_chunk,
    state_row_norms,
)
from .local_attention import mass_for_scores
from .logging_utils import log_duration
from .memories import memory_for_shape, shape_for_config
from .models import ProbeResult, StreamRecord
from .reporting import write_json, write_records, write_rows, write_spectrum, write_timings

LOGGER = logging.getLogger(__name__)

DRIFT_SCALE = 0.05
LATENT_DECAY = 0.95
LATENT_NOISE = 0.3
PLANT_GAIN = 2.0
DISCONTINUITY_FACTOR = 10.0
# Readbacks shorter than this are rounding residue of orthogonal keys.
EMPTY_READ = 1e-12
PROFILE_HORIZON = 64


@dataclass(frozen=True, eq=False)
class PlantedStream:
    """Token stream plus the planted structure used for measurement.

    ``probe_queries[t] . probe_keys[i]`` is at least ``M sqrt(d)`` for the most recent
    ``w_geo`` positions ``i <= t`` and at most ``-M sqrt(d)`` for older ones.
    ``planted_keys`` cycle through an orthonormal basis; ``planted_values`` are unit vectors.
    Token t is (latent_t + embed(planted_keys[t], planted_values[t])) * exp(log_scale[t]).
    """

    tokens: TokenSequence
    probe_queries: np.ndarray
    probe_keys: np.ndarray
    planted_keys: np.ndarray
    planted_values: np.ndarray
    log_scale: np.ndarray
    w_geo: int
    score_bound: float

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def probe_dim(self) -> int:
        return int(self.probe_keys.shape[1])

    def relevant_set(self, t: int) -> range:
        """0-based positions relevant to the query at 1-based step ``t``."""

        return range(max(0, t - self.w_geo), t)

    def clipped_scores(self, t: int) -> np.ndarray:
        """Scores of query ``t`` (1-based) against keys 1..t, clipped to [-M, M] after scaling."""

        limit = self.score_bound * math.sqrt(self.probe_dim)
        raw = self.probe_keys[:t] @ self.probe_queries[t - 1]
        return np.clip(raw, -limit, limit) / math.sqrt(self.probe_dim)


def generate_stream(cfg: ScenarioConfig) -> PlantedStream:
    """Deterministic planted stream for ``cfg`` (same config, same bytes)."""

    if cfg.w_geo < 1:
        raise PreconditionError(f"w_geo must be positive, got {cfg.w_geo}")
    length, d_model, key_dim, value_dim = cfg.stream_length, cfg.d_model, cfg.key_dim, cfg.value_dim
    if key_dim < 2:
        raise PreconditionError("Planted probes need key_dim >= 2")
    rng = np.random.default_rng(cfg.seed)

    log_scale = np.cumsum(DRIFT_SCALE * rng.standard_normal(length))
    latent = np.empty((length, d_model))
    current = rng.standard_normal(d_model)
    for step in range(length):
        current = LATENT_DECAY * current + LATENT_NOISE * rng.standard_normal(d_model)
        latent[step] = current

    # Two orthonormal directions carry the score geometry: q_t . k_i = a - b (t - i).
    frame, _ = np.linalg.qr(rng.standard_normal((key_dim, 2)))
    bound = cfg.score_bound * math.sqrt(key_dim)
    intercept, slope = bound * (2 * cfg.w_geo - 1), 2.0 * bound
    steps = np.arange(length, dtype=np.float64)
    probe_queries = np.stack([np.ones(length), steps], axis=1) @ frame.T
    probe_keys = np.stack([intercept + slope * steps, -slope * np.ones(length)], axis=1) @ frame.T

    basis, _ = np.linalg.qr(rng.standard_normal((key_dim, key_dim)))
    planted_keys = basis.T[np.arange(length) % key_dim]
    values = rng.standard_normal((length, value_dim))
    planted_values = values / np.linalg.norm(values, axis=1, keepdims=True)

    # Each token carries its planted pair through a fixed random embedding.
    embedding = rng.standard_normal((key_dim + value_dim, d_model)) / math.sqrt(key_dim + value_dim)
    content = np.hstack((planted_keys, planted_values)) @ embedding
    tokens = TokenSequence((latent + PLANT_GAIN * content) * np.exp(log_scale)[:, None])

    LOGGER.debug("Generated planted stream of %d steps (seed %d)", length, cfg.seed)
    return PlantedStream(
        tokens=tokens,
        probe_queries=probe_queries,
        probe_keys=probe_keys,
        planted_keys=planted_keys,
        planted_values=planted_values,
        log_scale=log_scale,
        w_geo=cfg.w_geo,
        score_bound=cfg.score_bound,
    )


def build_params(cfg: ScenarioConfig) -> GLAParams:
    params = GLAParams.initialize(
        cfg.d_model,
        cfg.key_dim,
        cfg.value_dim,
        cfg.heads,
        seed=cfg.seed,
        gate_bias=cfg.gate_bias,
        init_scale=cfg.init_scale,
        feature_map=cfg.feature_map,
        value_rule=cfg.value_rule,
        eta=cfg.eta,
    )
    return params.astype(np.float32) if cfg.precision == "f32" else params


def _measured_mass(stream: PlantedStream, t: int) -> float:
    return mass_for_scores(stream.clipped_scores(t), stream.relevant_set(t))


def time_fit(records: Sequence[StreamRecord], warmup: int) -> Optional[dict[str, float]]:
    """Linear fit of cumulative step time against t after the warmup steps."""

    if len(records) - warmup < 3:
        return None
    cumulative = np.cumsum([record.step_ns for record in records], dtype=np.float64)
    steps = np.array([record.t for record in records], dtype=np.float64)
    fit = linregress(steps[warmup:], cumulative[warmup:])
    return {
        "slope_ns_per_step": float(fit.slope),
        "intercept_ns": float(fit.intercept),
        "r_squared": float(fit.rvalue**2),
    }


@dataclass(frozen=True)
class ScenarioResult:
    records: tuple[StreamRecord, ...]
    summary: dict[str, Any]
    out_dir: Path


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Stream the planted tokens through one GLA layer chunk by chunk and export measurements."""

    out_dir = cfg.out_path
    out_dir.mkdir(parents=True, exist_ok=True)
    params = build_params(cfg)
    with log_duration(LOGGER, "stream generation"):
        stream = generate_stream(cfg)
    tokens = stream.tokens.astype(params.dtype)
    state = params.zero_state()
    initial_norm = state.frobenius()

    records: list[StreamRecord] = []
    gamma_max = 0.0
    key_bound = value_bound = 0.0
    snapshot_dir = out_dir / "snapshots"
    probe_rows = []
    step_index = 0
    sizes = chunk_sizes(len(tokens), cfg.chunk_size)
    LOGGER.info("Running %d steps in %d chunks of up to %d", len(tokens), len(sizes), cfg.chunk_size)
    for chunk_index, chunk in enumerate(tokens.chunks(sizes)):
        steps = iter_chunk(chunk, state, params)
        while True:
            started = time.perf_counter_ns()
            result = next(steps, None)
            elapsed = time.perf_counter_ns() - started
            if result is None:
                break
            step_index += 1
            state = result.state
            gamma_max = max(gamma_max, float(np.max(result.gamma)))
            key_bound = max(key_bound, float(np.max(np.linalg.norm(result.phi_key, axis=-1))))
            value_bound = max(value_bound, float(np.max(np.linalg.norm(result.value_written, axis=-1))))
            envelope = gamma_max**step_index * initial_norm + math.sqrt(params.heads) * key_bound * value_bound / (
                1.0 - gamma_max
            )
            state_fro = state.frobenius()
            records.append(
                StreamRecord(
                    t=step_index,
                    out_norm=float(np.linalg.norm(result.output)),
                    state_fro=state_fro,
                    bound_margin=envelope - state_fro,
                    relevant_mass=_measured_mass(stream, step_index) if cfg.measure_dilution else None,
                    step_ns=elapsed,
                    state_bytes=state.nbytes,
                )
            )
        if cfg.snapshot_every_chunk:
            snapshot_dir.mkdir(exist_ok=True)
            (snapshot_dir / f"chunk_{chunk_index:05d}.glas").write_bytes(state.to_bytes())
            probe_rows.append((chunk_index, step_index, format(float(stream.log_scale[step_index - 1]), ".17g")))
        LOGGER.debug("Chunk %d done at step %d (state norm %.4g)", chunk_index, step_index, state.frobenius())

    write_records(out_dir / "records.csv", records, include_timing=cfg.inline_timing)
    write_timings(out_dir / "timings.csv", records)
    if probe_rows:
        write_rows(out_dir / "probe_targets.csv", ("chunk", "t", "log_scale"), probe_rows)
    write_spectrum(out_dir / "spectrum.csv", extract_retention_spectrum(params, tokens))

    state_bytes = [record.state_bytes for record in records]
    masses = [record.relevant_mass for record in records if record.relevant_mass is not None]
    summary: dict[str, Any] = {
        "steps": len(records),
        "chunks": len(sizes),
        "time_fit": time_fit(records, cfg.warmup_steps),
        "max_state_bytes": max(state_bytes),
        "min_state_bytes": min(state_bytes),
        "constant_memory": max(state_bytes) == min(state_bytes),
        "max_state_fro": max(record.state_fro for record in records),
        "min_bound_margin": min(record.bound_margin for record in records),
        "gamma_max": gamma_max,
        "final_relevant_mass": masses[-1] if masses else None,
        "config": cfg.as_dict(),
    }
    write_json(out_dir / "summary.json", summary)
    LOGGER.info("Scenario finished: %d steps, state bytes %d", len(records), state_bytes[-1])
    return ScenarioResult(records=tuple(records), summary=summary, out_dir=out_dir)


# --- kernel comparison --------------------------------------------------------------


def probe_lags(window: int) -> tuple[int, ...]:
    """Controlled lags at which planted pairs are read back."""

    return tuple(sorted({1, max(1, window // 2), window}))


def drift_proxy(readback: np.ndarray, value: np.ndarray) -> float:
    """Least-squares error of fitting ``value`` by a multiple of ``readback`` (1 - cos^2)."""

    norm = float(np.linalg.norm(readback))
    if norm <= EMPTY_READ:
        return 1.0
    cosine = float(readback @ value) / (norm * float(np.linalg.norm(value)))
    return 1.0 - cosine * cosine


def discontinuities(series: Sequence[float], factor: float = DISCONTINUITY_FACTOR) -> list[int]:
    """Indices where the step-to-step change exceeds ``factor`` times the median change."""

    deltas = np.abs(np.diff(np.asarray(series, dtype=np.float64)))
    if deltas.size == 0:
        return []
    threshold = factor * float(np.median(deltas))
    return [int(i) + 1 for i in np.flatnonzero((deltas > threshold) & (deltas > 0))]


@dataclass(frozen=True)
class KernelComparison:
    rows: tuple[tuple[str, int, float, float, int], ...]
    summary: dict[str, dict[str, Any]]


def _shape_parameters(shape: KernelShape) -> dict[str, Any]:
    values = {field.name: getattr(shape, field.name) for field in fields(shape)}
    return {name: list(value) if isinstance(value, tuple) else value for name, value in values.items()}


def compare_kernels(
    cfg: ScenarioConfig,
    shapes: Sequence[KernelShape | str] = SHAPE_NAMES,
) -> KernelComparison:
    """Run the planted stream through one memory per kernel shape and track drift per step.

    Shapes given by name take their parameters from ``cfg`` (the exponential
    shape uses the stream's mean gates); shape objects are used as given. The
    exponential memory always runs on the live gates. Writes
    ``kernels.csv``, ``kernels_summary.json`` and one ``kernel_profiles/<shape>.csv``
    per shape to ``cfg.out_dir``.
    """

    if not shapes:
        raise PreconditionError("compare_kernels needs at least one shape")
    stream = generate_stream(cfg)
    params = build_params(cfg).astype(np.float64)
    gates = np.stack([gate(x_t, params)[: cfg.key_dim] for x_t in stream.tokens.x])
    resolved = [
        shape_for_config(shape, cfg, gates.mean(axis=0)) if isinstance(shape, str) else shape
        for shape in shapes
    ]
    names = [shape.name for shape in resolved]
    if len(set(names)) != len(names):
        raise PreconditionError(f"Each kernel shape may appear once, got {names}")
    lags = probe_lags(cfg.window)
    out_dir = cfg.out_path
    horizon = min(len(stream), PROFILE_HORIZON)

    rows: list[tuple[str, int, float, float, int]] = []
    summary: dict[str, dict[str, Any]] = {}
    for shape in resolved:
        name = shape.name
        memory = memory_for_shape(shape, cfg.key_dim, cfg.value_dim, cfg.window)
        drifts, norms = [], []
        with log_duration(LOGGER, f"kernel {name}"):
            for step in range(len(stream)):
                memory.step(stream.planted_keys[step], stream.planted_values[step], gates[step])
                errors = [
                    drift_proxy(memory.read(stream.planted_keys[step - lag]), stream.planted_values[step - lag])
                    for lag in lags
                    if step - lag >= 0
                ]
                drift = float(np.mean(errors)) if errors else 1.0
                norm = memory.state_fro
                drifts.append(drift)
                norms.append(norm)
                rows.append((name, step + 1, drift, norm, memory.state_bytes))
        build_profile(shape, horizon).write_csv(out_dir / "kernel_profiles" / f"{name}.csv")
        slope = float(linregress(np.arange(1, len(norms) + 1), norms).slope) if len(norms) >= 3 else None
        summary[name] = {
            "parameters": _shape_parameters(shape),
            "norm_slope": slope,
            "max_drift": max(drifts),
            "mean_drift": float(np.mean(drifts)),
            "final_state_fro": norms[-1],
            "discontinuities": len(discontinuities(drifts)),
            "state_bytes": memory.state_bytes,
        }
        LOGGER.info("Kernel %s: max drift %.3f, norm slope %s", name, max(drifts), slope)

    write_rows(
        out_dir / "kernels.csv",
        ("shape", "t", "drift_proxy", "state_fro", "state_bytes"),
        ((name, t, format(drift, ".17g"), format(norm, ".17g"), size) for name, t, drift, norm, size in rows),
    )
    write_json(out_dir / "kernels_summary.json", summary)
    return KernelComparison(rows=tuple(rows), summary=summary)


# --- probing exported snapshots ----------------------------------------------------


def _read_csv(path: Path) -> list[dict[str, str]]:
    if not path.is_file():
        raise PreconditionError(f"Missing {path.name} in {path.parent}; run the scenario first")
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


def probe_snapshots(cfg: ScenarioConfig) -> ProbeResult:
    """Ridge-probe the planted log-scale from per-chunk state snapshots in ``cfg.out_dir``.

    Features are the logs of the state's key-channel row norms, which track
    twice the recent log-scale; the band partition comes from
    the run's ``spectrum.csv``. Writes ``probe.json``.
    """

    run_dir = cfg.out_path
    targets = {int(row["chunk"]): float(row["log_scale"]) for row in _read_csv(run_dir / "probe_targets.csv")}
    spectrum = [row for row in _read_csv(run_dir / "spectrum.csv") if row["layer"] == "0"]
    tau = np.array([float(row["tau"]) for row in sorted(spectrum, key=lambda row: int(row["channel"]))])

    snapshots = sorted((run_dir / "snapshots").glob("chunk_*.glas"))
    if not snapshots:
        raise PreconditionError(f"No snapshots found under {run_dir / 'snapshots'}")
    features, values = [], []
    for path in snapshots:
        chunk = int(path.stem.split("_")[1])
        if chunk not in targets:
            LOGGER.warning("Snapshot %s has no probe target; skipping", path.name)
            continue
        state = RecurrentState.from_bytes(path.read_bytes(), heads=cfg.heads)
        features.append(np.log(np.maximum(state_row_norms(state), np.finfo(np.float64).tiny)))
        values.append(targets[chunk])
    result = ridge_probe(
        np.stack(features),
        np.array(values),
        cfg.probe_lambda,
        retention_bands(tau),
        seed=cfg.seed,
    )
    write_json(run_dir / "probe.json", {**result.to_dict(), "samples": len(values)})
    LOGGER.info("Probe r^2 %.3f over %d snapshots", result.r_squared, len(values))
    return result

__all__ = [
    "PlantedStream",
    "generate_stream",
    "build_params",
    "time_fit",
    "ScenarioResult",
    "run_scenario",
    "probe_lags",
    "drift_proxy",
    "discontinuities",
    "KernelComparison",
    "compare_kernels",
    "probe_snapshots",
]
