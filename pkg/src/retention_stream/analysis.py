"""Executable checks of the retention bounds, retention spectra and ridge probing.

Every ``verify_*`` function returns a :class:`~retention_stream.models.BoundReport`;
a failed bound is reported, never raised.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import linregress

from .backprop import backward, finite_diff_check, record_forward
from .errors import NumericalError, PreconditionError, ShapeMismatchError
from .kernel_model import eval_channel_kernel, effective_horizon
from .linear_attention import (
    GLAParams,
    RecurrentState,
    TokenSequence,
    ValueRule,
    chunk_sizes,
    discounted_objective,
    gate,
    process_stream,
    readout,
    recursive_objective_step,
    state_update,
    ttt_step,
)
from .local_attention import DilutionConfig, DilutionReport, RopeIndex, rope_rotate, verify_dilution
from .models import BOUND_TOLERANCE, BoundReport, ProbeResult, RetentionSpectrum

LOGGER = logging.getLogger(__name__)

CONTAMINATION_FLOOR = 1e-6
HORIZON_WEIGHT = math.exp(-3.0)
HORIZON_CUTOFF = 0.05
# Relative error allowed when splitting a readout into initial and written parts.
SPLIT_TOLERANCE = 1e-9
# Gates are drawn from [gamma_bar - GATE_BAND, gamma_bar].
GATE_BAND = 0.1
BANDS = ("short", "medium", "long")
MAX_MARGINS = 1000


def _unit(rng: np.random.Generator, size: int) -> np.ndarray:
    vector = rng.standard_normal(size)
    return vector / np.linalg.norm(vector)


def _thin(margins: Sequence[float]) -> tuple[float, ...]:
    """Keep at most MAX_MARGINS evenly spaced margins for export."""

    stride = max(1, math.ceil(len(margins) / MAX_MARGINS))
    return tuple(float(value) for value in margins[::stride])


def _report(name: str, samples: int, violation: float, margins: Sequence[float] = (), **details) -> BoundReport:
    tolerance = details.pop("tolerance", BOUND_TOLERANCE)
    report = BoundReport(
        name=name,
        samples=samples,
        max_violation=float(violation),
        per_step_margin=_thin(margins),
        tolerance=tolerance,
        details=details,
    )
    if report.passed:
        LOGGER.info("%s passed over %d samples (max violation %.3e)", name, samples, violation)
    else:
        LOGGER.warning("%s FAILED over %d samples (max violation %.3e)", name, samples, violation)
    return report


# --- objective and state bounds -----------------------------------------------------


def verify_recursion(trials: int = 1000, seed: int = 0, max_dim: int = 8, max_steps: int = 64) -> BoundReport:
    """Iterated recursive objective against the direct discounted sum (absolute 1e-10)."""

    if trials < 1:
        raise PreconditionError(f"trials must be positive, got {trials}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        key_dim, value_dim = rng.integers(1, max_dim + 1, size=2)
        steps = int(rng.integers(1, max_steps + 1))
        S = rng.standard_normal((key_dim, value_dim))
        keys = rng.standard_normal((steps, key_dim))
        values = rng.standard_normal((steps, value_dim))
        gammas = rng.uniform(0.0, 1.0, size=steps)
        J = 0.0
        for k_t, v_t, gamma_t in zip(keys, values, gammas):
            J = recursive_objective_step(J, S, k_t, v_t, float(gamma_t))
        worst = max(worst, abs(J - discounted_objective(S, keys, values, gammas)))
    return _report("recursion", trials, worst, tolerance=1e-10)


def _initial_state(rng: np.random.Generator, key_dim: int, value_dim: int, scale: float) -> RecurrentState:
    return RecurrentState(scale * rng.standard_normal((1, key_dim, value_dim)))


def verify_contamination(
    T: int = 1000,
    key_dim: int = 8,
    value_dim: int = 8,
    seed: int = 0,
    gamma: float = 1.0,
    initial_scale: float = 1.0,
) -> BoundReport:
    """Track the initial-state term q^T S_0 of the readout under a constant gate.

    With gamma = 1 the term must be bit-identical at every step; with gamma < 1 its
    norm must strictly decrease while positive. The linear split is cross-checked
    by differencing runs with and without S_0; a relative split error above
    SPLIT_TOLERANCE fails the check.
    """

    if T < 2:
        raise PreconditionError(f"Need T >= 2, got {T}")
    rng = np.random.default_rng(seed)
    params = GLAParams.bare(key_dim, value_dim)
    initial = _initial_state(rng, key_dim, value_dim, initial_scale)
    query = rng.standard_normal(key_dim)
    keys = rng.standard_normal((T, key_dim))
    values = rng.standard_normal((T, value_dim))
    no_write_k, no_write_v = np.zeros(key_dim), np.zeros(value_dim)

    carried, with_initial, without_initial = initial, initial, params.zero_state()
    contributions = []
    split_error = 0.0
    for k_t, v_t in zip(keys, values):
        carried = state_update(carried, no_write_k, no_write_v, gamma, params)
        with_initial = state_update(with_initial, k_t, v_t, gamma, params)
        without_initial = state_update(without_initial, k_t, v_t, gamma, params)
        term = readout(query, carried)
        contributions.append(term)
        full = readout(query, with_initial)
        difference = full - readout(query, without_initial)
        error = float(np.max(np.abs(difference - term), initial=0.0))
        relative = error / max(1.0, float(np.linalg.norm(full)))
        split_error = max(split_error, relative)

    first = contributions[0]
    scale = max(float(np.linalg.norm(first)), np.finfo(np.float64).tiny)
    margins = []
    if gamma == 1.0:
        changed = [float(np.linalg.norm(term - first)) / scale for term in contributions]
        violation = max(changed)
        margins = [-value for value in changed]
        bit_identical = all(np.array_equal(term, first) for term in contributions)
        if not bit_identical:
            violation = math.inf
        details = {"gamma": gamma, "bit_identical": bit_identical}
    else:
        norms = [float(np.linalg.norm(term)) for term in contributions]
        steps = [(prev - now) / scale for prev, now in zip(norms, norms[1:]) if prev > 0]
        margins = steps
        strictly = all(now < prev for prev, now in zip(norms, norms[1:]) if prev > 0)
        violation = -min(steps) if steps else 0.0
        if not strictly:
            violation = math.inf
        details = {"gamma": gamma, "strictly_decreasing": strictly}
    details.update(
        initial_contribution=float(np.linalg.norm(first)),
        final_contribution=float(np.linalg.norm(contributions[-1])),
        differencing_max_error=split_error,
    )
    if split_error > SPLIT_TOLERANCE:
        violation = max(violation, split_error)
    name = "contamination" if gamma == 1.0 else f"contamination_gamma_{gamma:g}"
    return _report(name, T, violation, margins, **details)


def contamination_threshold(gamma_bar: float, floor: float = CONTAMINATION_FLOOR) -> int:
    """Closed-form step count ceil(log(floor) / log(gamma_bar))."""

    if not 0.0 < gamma_bar < 1.0:
        raise PreconditionError(f"gamma_bar must lie in (0, 1), got {gamma_bar}")
    return math.ceil(math.log(floor) / math.log(gamma_bar))


def verify_initial_decay(
    T: int = 5000,
    key_dim: int = 8,
    value_dim: int = 8,
    gamma_bar: float = 0.9,
    seed: int = 0,
    zero_query: bool = False,
) -> BoundReport:
    """Initial-state contamination against the envelope ||q|| ||S_0||_F gamma_bar^t.

    Channel gates are drawn from [gamma_bar - GATE_BAND, gamma_bar] with channel 0
    pinned at gamma_bar. The margins run on the ratio prod_j diag(gamma_j / gamma_bar),
    which stays representable long after gamma_bar^t underflows; the gated state
    itself is checked against the envelope while the envelope is representable.
    """

    threshold = contamination_threshold(gamma_bar)
    rng = np.random.default_rng(seed)
    params = GLAParams.bare(key_dim, value_dim)
    initial = _initial_state(rng, key_dim, value_dim, 1.0)
    query = np.zeros(key_dim) if zero_query else rng.standard_normal(key_dim)
    scale = float(np.linalg.norm(query)) * initial.frobenius()
    no_write_k, no_write_v = np.zeros(key_dim), np.zeros(value_dim)
    floor = np.finfo(np.float64).tiny / np.finfo(np.float64).eps

    ratio_state, state = initial, initial
    margins = []
    direct_steps = 0
    direct_ok = True
    envelope = scale
    for _ in range(T):
        gammas = rng.uniform(max(gamma_bar - GATE_BAND, 0.0), gamma_bar, size=key_dim)
        gammas[0] = gamma_bar
        ratio_state = state_update(ratio_state, no_write_k, no_write_v, gammas / gamma_bar, params)
        normalized = float(np.linalg.norm(readout(query, ratio_state))) / scale if scale else 0.0
        margins.append(1.0 - normalized)
        envelope *= gamma_bar
        if envelope > floor:
            state = state_update(state, no_write_k, no_write_v, gammas, params)
            direct_steps += 1
            if float(np.linalg.norm(readout(query, state))) > envelope * (1.0 + BOUND_TOLERANCE):
                direct_ok = False
    violation = -min(margins) if direct_ok else math.inf

    # Constant gates: first step where the contribution drops below the floor.
    initial_norm = float(np.linalg.norm(readout(query, initial)))
    measured: Optional[int] = None
    if initial_norm > 0:
        state = initial
        for step in range(1, threshold + 2):
            state = state_update(state, no_write_k, no_write_v, gamma_bar, params)
            if np.linalg.norm(readout(query, state)) < CONTAMINATION_FLOOR * initial_norm:
                measured = step
                break
        if measured is None or measured > threshold:
            violation = math.inf
    return _report(
        f"initial_decay_gamma_{gamma_bar:g}",
        T,
        violation,
        margins,
        gamma_bar=gamma_bar,
        closed_form_threshold=threshold,
        measured_threshold=measured,
        envelope_at_T=gamma_bar**T,
        direct_steps=direct_steps,
    )


def verify_state_bound(
    T: int = 100000,
    B_k: float = 1.0,
    B_v: float = 1.0,
    gamma_bar: float = 0.9,
    seed: int = 0,
    gamma_override: Optional[float] = None,
    key_dim: int = 4,
    value_dim: int = 4,
    initial_scale: float = 0.0,
) -> BoundReport:
    """State norm against gamma_bar^t ||S_0||_F + B_k B_v / (1 - gamma_bar).

    S_0 is zero unless ``initial_scale`` > 0, in which case its entries are
    Gaussian with that standard deviation.

    With gamma_bar = 1 the linear envelope ||S_0||_F + t B_k B_v is checked instead.
    ``gamma_override`` forces every gate to that value while the envelope keeps
    using ``gamma_bar``; it exists to show that a broken gate fails the check.
    """

    if not 0.0 < gamma_bar <= 1.0:
        raise PreconditionError(f"gamma_bar must lie in (0, 1], got {gamma_bar}")
    if initial_scale < 0:
        raise PreconditionError(f"initial_scale must be nonnegative, got {initial_scale}")
    rng = np.random.default_rng(seed)
    params = GLAParams.bare(key_dim, value_dim)
    if initial_scale > 0:
        state = _initial_state(rng, key_dim, value_dim, initial_scale)
    else:
        state = params.zero_state()
    initial_norm = state.frobenius()
    ungated = gamma_bar == 1.0
    margins: list[float] = []
    norms: list[float] = []
    overflowed = False
    for step in range(1, T + 1):
        key = _unit(rng, key_dim) * B_k * rng.uniform(0.5, 1.0)
        value = _unit(rng, value_dim) * B_v * rng.uniform(0.5, 1.0)
        if gamma_override is not None:
            gammas = np.full(key_dim, gamma_override)
        elif ungated:
            gammas = np.ones(key_dim)
        else:
            gammas = rng.uniform(gamma_bar / 2.0, gamma_bar, size=key_dim)
            gammas[0] = gamma_bar
        try:
            state = state_update(state, key, value, gammas, params)
        except NumericalError:
            overflowed = True
            break
        if ungated:
            bound = initial_norm + step * B_k * B_v
        else:
            bound = gamma_bar**step * initial_norm + B_k * B_v / (1.0 - gamma_bar)
        norm = state.frobenius()
        norms.append(norm)
        margins.append((bound - norm) / bound)
    violation = math.inf if overflowed else -min(margins)
    details: dict[str, object] = {
        "gamma_bar": gamma_bar,
        "B_k": B_k,
        "B_v": B_v,
        "max_norm": max(norms) if norms else None,
        "initial_norm": initial_norm,
        "gamma_override": gamma_override,
        "overflowed": overflowed,
    }
    if ungated and len(norms) >= 3:
        slope = float(linregress(np.arange(1, len(norms) + 1), norms).slope)
        details["norm_slope"] = slope
        if slope > B_k * B_v:
            violation = max(violation, (slope - B_k * B_v) / (B_k * B_v))
    name = "state_bound_ungated" if ungated else "state_bound"
    if initial_scale > 0:
        name += "_initial"
    return _report(name, len(norms), violation, margins, **details)


def verify_horizon(gamma_grid: Iterable[float], tol: float = 1e-3, extra_lags: int = 10) -> BoundReport:
    """Weight e^-3 at continuous lag 3 tau, and below 5% for integer lags from ceil(3 tau)."""

    grid = [float(value) for value in gamma_grid]
    if not grid:
        raise PreconditionError("gamma_grid must not be empty")
    violation = -math.inf
    weights = {}
    for gamma in grid:
        tau = effective_horizon(gamma)
        weight = eval_channel_kernel(gamma, 3.0 * tau)
        weights[f"{gamma:g}"] = weight
        violation = max(violation, abs(weight - HORIZON_WEIGHT) - tol)
        first = math.ceil(3.0 * tau)
        for lag in range(first, first + extra_lags):
            violation = max(violation, eval_channel_kernel(gamma, lag) - HORIZON_CUTOFF)
    return _report("horizon", len(grid), violation, weights_at_three_tau=weights, tol=tol)


def verify_ttt_equivalence(
    trials: int = 1000,
    key_dim: int = 6,
    value_dim: int = 5,
    seed: int = 0,
    undiscounted_every: int = 10,
) -> BoundReport:
    """Discounted TTT step against the delta-rule state update on random inputs."""

    if trials < 1:
        raise PreconditionError(f"trials must be positive, got {trials}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    undiscounted = 0
    for trial in range(trials):
        gamma = 1.0 if trial % undiscounted_every == 0 else float(rng.uniform(1e-3, 1.0))
        undiscounted += gamma == 1.0
        eta = float(rng.uniform(0.01, 1.0))
        state = RecurrentState(rng.standard_normal((1, key_dim, value_dim)))
        key = rng.standard_normal(key_dim)
        value = rng.standard_normal(value_dim)
        params = GLAParams.bare(key_dim, value_dim, value_rule=ValueRule.DELTA, eta=eta)
        expected = state_update(state, key, value, gamma, params).S
        actual = ttt_step(state, key, value, gamma, eta).S
        scale = max(float(np.linalg.norm(expected)), np.finfo(np.float64).tiny)
        worst = max(worst, float(np.linalg.norm(actual - expected)) / scale)
    return _report("ttt_equivalence", trials, worst, undiscounted_trials=undiscounted)


# --- streaming properties ---------------------------------------------------------------


DEFAULT_CHUNKINGS: tuple[tuple[int, ...], ...] = ((64,), (21, 21, 21, 1), (10,) * 6 + (4,))


def verify_chunking(
    params: GLAParams,
    tokens: TokenSequence,
    chunkings: Sequence[Sequence[int]] = DEFAULT_CHUNKINGS,
) -> BoundReport:
    """Outputs and final state must not depend on chunk boundaries."""

    whole = chunk_sizes(len(tokens), len(tokens))
    reference, reference_state = process_stream(tokens, params.zero_state(), params, whole)
    scale = max(float(np.max(np.abs(reference))), 1.0)
    worst = 0.0
    for sizes in chunkings:
        outputs, state = process_stream(tokens, params.zero_state(), params, sizes)
        worst = max(
            worst,
            float(np.max(np.abs(outputs - reference))) / scale,
            float(np.max(np.abs(state.S - reference_state.S))) / scale,
        )
    return _report("chunking", len(chunkings), worst, chunkings=[list(sizes) for sizes in chunkings])


def verify_gradients(
    instances: int = 100,
    seed: int = 0,
    d_model: int = 4,
    key_dim: int = 3,
    value_dim: int = 3,
    T: int = 5,
    h: float = 1e-5,
    tolerance: float = 1e-5,
) -> BoundReport:
    """Analytic gradients against central differences, plus an injected-fault run."""

    rng = np.random.default_rng(seed)
    worst = 0.0
    rules = (ValueRule.PLAIN, ValueRule.DELTA)
    for instance in range(instances):
        params = GLAParams.initialize(
            d_model,
            key_dim,
            value_dim,
            seed=int(rng.integers(2**31)),
            gate_bias=float(rng.uniform(-1.0, 1.0)),
            init_scale=0.5,
            value_rule=rules[instance % 2],
            eta=0.5,
        )
        tokens = TokenSequence(rng.standard_normal((T, d_model)))
        report = finite_diff_check(tokens, params, h, tolerance, seed=instance)
        worst = max(worst, report.max_rel_error)

    # A gradient with one corrupted entry must be caught.
    params = GLAParams.initialize(d_model, key_dim, value_dim, seed=seed, gate_bias=0.0, init_scale=0.5)
    tokens = TokenSequence(rng.standard_normal((T, d_model)))
    output_grads = rng.standard_normal((T, value_dim))
    clean = backward(record_forward(tokens, params.zero_state(), params), output_grads)
    corrupted_W_q = clean.W_q.copy()
    corrupted_W_q[0, 0] += 1.0
    corrupted = dataclasses.replace(clean, W_q=corrupted_W_q)
    fault = finite_diff_check(tokens, params, h, tolerance, output_grads=output_grads, gradients=corrupted)
    violation = worst if not fault.passed else math.inf
    return _report(
        "gradients",
        instances,
        violation,
        tolerance=tolerance,
        h=h,
        fault_detected=not fault.passed,
        fault_rel_error=fault.max_rel_error,
    )


def verify_rope(trials: int = 200, dim: int = 12, seed: int = 0, max_shift: int = 20) -> BoundReport:
    """Isometry (1e-12), relative-offset score invariance (1e-10) and special-token identity."""

    rng = np.random.default_rng(seed)
    iso_error = shift_error = special_error = 0.0
    for _ in range(trials):
        query, key = _unit(rng, dim), _unit(rng, dim)
        first = RopeIndex(tuple(int(v) for v in rng.integers(max_shift + 1, 3 * max_shift, size=3)))
        second = RopeIndex(tuple(int(v) for v in rng.integers(max_shift + 1, 3 * max_shift, size=3)))
        shift = rng.integers(-max_shift, max_shift + 1, size=3)
        first_shifted = RopeIndex(tuple(int(v) for v in np.add(first.pi, shift)))
        second_shifted = RopeIndex(tuple(int(v) for v in np.add(second.pi, shift)))

        iso_error = max(iso_error, abs(float(np.linalg.norm(rope_rotate(query, first))) - 1.0))
        score = rope_rotate(query, first) @ rope_rotate(key, second)
        shifted = rope_rotate(query, first_shifted) @ rope_rotate(key, second_shifted)
        shift_error = max(shift_error, abs(float(score - shifted)))
        special = rope_rotate(query, RopeIndex.special_token())
        special_error = max(special_error, float(np.max(np.abs(special - query))))
    violation = max(iso_error - 1e-12, shift_error - 1e-10, special_error)
    return _report(
        "rope",
        trials,
        violation,
        tolerance=0.0,
        isometry_error=iso_error,
        shift_error=shift_error,
        special_error=special_error,
    )


def verify_dilution_report(
    cfg: DilutionConfig, trials: int = 1000, t_max: int = 5000, seed: int = 0
) -> tuple[BoundReport, DilutionReport]:
    """Bound-report view of :func:`verify_dilution` plus the half-mass crossing check."""

    dilution = verify_dilution(trials, cfg, t_max, seed)
    relative = max((row.measured_mass - row.bound) / row.bound for row in dilution.rows)
    beyond_crossing = [row for row in dilution.rows if row.t > cfg.crossing_point]
    half_mass_excess = max((row.measured_mass - 0.5 for row in beyond_crossing), default=-0.5)
    # Dominance of the best case is checked at 1e-9 absolute.
    violation = max(relative, dilution.random_max_excess - 1e-9, half_mass_excess if half_mass_excess >= 0 else -1.0)
    report = _report(
        "dilution",
        len(dilution.rows) + trials,
        violation,
        [row.bound - row.measured_mass for row in dilution.rows],
        w_geo=cfg.w_geo,
        M=cfg.M,
        crossing_point=cfg.crossing_point,
        random_trials=trials,
        random_max_excess=dilution.random_max_excess,
    )
    return report, dilution


# --- spectra and probes -----------------------------------------------------------------------


def extract_retention_spectrum(
    params: GLAParams | Sequence[GLAParams], sample_tokens: TokenSequence | np.ndarray
) -> RetentionSpectrum:
    """Per-channel mean gate over the samples and its horizon, one entry per layer.

    Means use exactly rounded summation, so the result does not depend on sample order.
    """

    layers = [params] if isinstance(params, GLAParams) else list(params)
    samples = sample_tokens.x if isinstance(sample_tokens, TokenSequence) else np.atleast_2d(sample_tokens)
    if samples.shape[0] < 1:
        raise PreconditionError("Need at least one sample token")
    gamma_bars, taus = [], []
    for layer in layers:
        gates = np.stack([gate(x_t, layer) for x_t in samples]).astype(np.float64)
        gamma_bar = np.array([math.fsum(column) / gates.shape[0] for column in gates.T])
        gamma_bars.append(gamma_bar)
        taus.append(-1.0 / np.log(gamma_bar))
    return RetentionSpectrum(tuple(gamma_bars), tuple(taus))


def retention_bands(tau: np.ndarray, short: float = 5.0, long: float = 50.0) -> dict[str, frozenset[int]]:
    """Partition channels into short (tau < short), medium and long (tau >= long) bands."""

    tau = np.asarray(tau, dtype=np.float64).ravel()
    return {
        "short": frozenset(int(c) for c in np.flatnonzero(tau < short)),
        "medium": frozenset(int(c) for c in np.flatnonzero((tau >= short) & (tau < long))),
        "long": frozenset(int(c) for c in np.flatnonzero(tau >= long)),
    }


def _split(
    count: int, train_fraction: float, seed: int, groups: Optional[Sequence[object]]
) -> tuple[np.ndarray, np.ndarray]:
    if groups is not None:
        labels = np.asarray(groups)
        if labels.shape[0] != count:
            raise ShapeMismatchError(f"{labels.shape[0]} group labels for {count} samples")
        held_out = labels == labels[-1]
        if held_out.all():
            raise PreconditionError("Cross-stream split needs at least two groups")
        return np.flatnonzero(~held_out), np.flatnonzero(held_out)
    order = np.random.default_rng(seed).permutation(count)
    train_count = min(count - 1, max(1, int(round(train_fraction * count))))
    return np.sort(order[:train_count]), np.sort(order[train_count:])


def ridge_probe(
    features: np.ndarray,
    targets: np.ndarray,
    reg_lambda: float,
    band_partition: Mapping[str, Iterable[int]],
    train_fraction: float = 0.7,
    seed: int = 0,
    groups: Optional[Sequence[object]] = None,
) -> ProbeResult:
    """Closed-form ridge regression on standardized features with held-out r^2.

    Without ``groups`` the split is a seeded shuffle; with ``groups`` (one stream
    label per sample) the samples of the last sample's stream are held out.
    """

    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeMismatchError(f"features {X.shape} and targets {y.shape} do not align")
    if X.shape[0] < 2:
        raise PreconditionError("ridge_probe needs at least two samples")
    if reg_lambda < 0:
        raise PreconditionError(f"reg_lambda must be nonnegative, got {reg_lambda}")
    train, test = _split(X.shape[0], train_fraction, seed, groups)

    mean = X[train].mean(axis=0)
    std = X[train].std(axis=0)
    std[std == 0] = 1.0
    X_train = (X[train] - mean) / std
    y_mean = float(y[train].mean())
    y_train = y[train] - y_mean

    dims = X.shape[1]
    if reg_lambda == 0 and np.linalg.matrix_rank(X_train) < dims:
        raise NumericalError("Normal equations are singular with reg_lambda=0; use reg_lambda > 0")
    gram = X_train.T @ X_train + reg_lambda * np.eye(dims)
    try:
        w_std = scipy.linalg.solve(gram, X_train.T @ y_train, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Ridge system could not be solved ({exc}); increase reg_lambda") from exc

    weights = w_std / std
    intercept = y_mean - float(mean @ weights)
    predictions = X[test] @ weights + intercept
    residual = float(np.sum((y[test] - predictions) ** 2))
    total = float(np.sum((y[test] - y[test].mean()) ** 2))
    r_squared = 1.0 - residual / total if total > 0 else (1.0 if residual == 0 else 0.0)

    magnitude = np.abs(w_std)
    band_mass = {band: float(magnitude[sorted(band_partition.get(band, ()))].sum()) for band in BANDS}
    covered = sum(band_mass.values())
    if covered > 0:
        attribution = {band: mass / covered for band, mass in band_mass.items()}
    else:
        attribution = {band: 1.0 / len(BANDS) for band in BANDS}
    return ProbeResult(
        weights=weights,
        intercept=intercept,
        r_squared=r_squared,
        band_attribution=attribution,
        train_size=int(train.size),
        test_size=int(test.size),
    )


__all__ = [
    "verify_recursion",
    "verify_contamination",
    "contamination_threshold",
    "verify_initial_decay",
    "verify_state_bound",
    "verify_horizon",
    "verify_ttt_equivalence",
    "verify_chunking",
    "verify_gradients",
    "verify_rope",
    "verify_dilution_report",
    "extract_retention_spectrum",
    "retention_bands",
    "ridge_probe",
]
