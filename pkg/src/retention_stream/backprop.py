"""Backpropagation through time for the gated linear attention recurrence.

The forward record keeps per-step gates, feature-mapped keys and written values
plus a state checkpoint every few steps; the backward sweep recomputes the states
of one segment at a time, newest segment first.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit

from .errors import PreconditionError, ShapeMismatchError
from .linear_attention import (
    GATE_EPS,
    GLAParams,
    RecurrentState,
    TokenSequence,
    ValueRule,
    _apply_update,
    _decay,
    _write,
    feature_map_grad,
    process_chunk,
    readout,
)

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-step quantities needed by :func:`backward`, O(T*d) plus sparse checkpoints."""

    tokens: TokenSequence
    params: GLAParams
    state_0: RecurrentState
    sigmoid: np.ndarray
    gammas: np.ndarray
    raw_keys: np.ndarray
    phi_keys: np.ndarray
    written: np.ndarray
    queries: np.ndarray
    outputs: np.ndarray
    checkpoints: dict[int, np.ndarray]
    checkpoint_every: int

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, eq=False)
class Gradients:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_gamma: np.ndarray
    b_gamma: np.ndarray
    inputs: np.ndarray
    state_0: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for field in dataclasses.fields(self):
            yield field.name, getattr(self, field.name)


@dataclass(frozen=True)
class FiniteDiffReport:
    max_rel_error: float
    passed: bool
    worst_entry: tuple[str, tuple[int, ...]]
    entries: int

    def to_dict(self) -> dict[str, object]:
        return {
            "max_rel_error": self.max_rel_error,
            "pass": self.passed,
            "worst_entry": [self.worst_entry[0], list(self.worst_entry[1])],
            "entries": self.entries,
        }


def record_forward(
    tokens: TokenSequence,
    state_0: RecurrentState,
    params: GLAParams,
    checkpoint_every: int = 16,
) -> ForwardTrace:
    """Run the recurrence and keep what :func:`backward` needs."""

    if checkpoint_every < 1:
        raise PreconditionError(f"checkpoint_every must be positive, got {checkpoint_every}")
    if tokens.d_model != params.d_model:
        raise ShapeMismatchError(f"Tokens have d_model={tokens.d_model}, params expect {params.d_model}")
    heads, key_dim, value_dim = params.heads, params.key_dim, params.value_dim
    length = len(tokens)
    sigmoid = np.empty((length, heads, key_dim))
    gammas = np.empty_like(sigmoid)
    raw_keys = np.empty_like(sigmoid)
    phi_keys = np.empty_like(sigmoid)
    queries = np.empty_like(sigmoid)
    written = np.empty((length, heads, value_dim))
    outputs = np.empty((length, heads * value_dim))
    checkpoints: dict[int, np.ndarray] = {}

    state = state_0
    for step, x_t in enumerate(tokens.x):
        if step % checkpoint_every == 0:
            checkpoints[step] = state.S
        activation = expit(params.W_gamma @ x_t + params.b_gamma)
        gamma = np.clip(activation, GATE_EPS, 1.0 - GATE_EPS)
        key = (params.W_k @ x_t).reshape(heads, key_dim)
        query = params.W_q @ x_t
        state, gamma_heads, phi_key, value_written = _apply_update(
            state, key, params.W_v @ x_t, gamma, params
        )
        sigmoid[step] = activation.reshape(heads, key_dim)
        gammas[step] = gamma_heads
        raw_keys[step] = key
        phi_keys[step] = phi_key
        queries[step] = query.reshape(heads, key_dim)
        written[step] = value_written
        outputs[step] = readout(query, state)
    LOGGER.debug("Recorded forward pass of %d steps (%d checkpoints)", length, len(checkpoints))
    return ForwardTrace(
        tokens=tokens,
        params=params,
        state_0=state_0,
        sigmoid=sigmoid,
        gammas=gammas,
        raw_keys=raw_keys,
        phi_keys=phi_keys,
        written=written,
        queries=queries,
        outputs=outputs,
        checkpoints=checkpoints,
        checkpoint_every=checkpoint_every,
    )


def _segment_states(trace: ForwardTrace, start: int, stop: int) -> list[np.ndarray]:
    """States S_start .. S_stop (S_j is the state after j tokens)."""

    states = [trace.checkpoints[start]]
    for step in range(start, stop):
        decayed = _decay(states[-1], trace.gammas[step])
        states.append(_write(decayed, trace.phi_keys[step], trace.written[step]))
    return states


def backward(trace: Optional[ForwardTrace], output_grads: np.ndarray) -> Gradients:
    """Exact gradients of sum_t <output_grads[t], o_t> for a recorded forward pass.

    Clamped gates contribute no derivative to the gate parameters.
    """

    if trace is None:
        raise PreconditionError("backward needs the ForwardTrace of a recorded forward pass")
    params = trace.params
    grads_out = np.asarray(output_grads, dtype=np.float64)
    if grads_out.shape != trace.outputs.shape:
        raise ShapeMismatchError(
            f"output_grads has shape {grads_out.shape}, expected {trace.outputs.shape}"
        )
    heads, key_dim, value_dim = params.heads, params.key_dim, params.value_dim
    grads_out = grads_out.reshape(-1, heads, value_dim)
    delta = params.value_rule is ValueRule.DELTA
    inside = (trace.sigmoid > GATE_EPS) & (trace.sigmoid < 1.0 - GATE_EPS)

    dW_q = np.zeros(params.W_q.shape)
    dW_k = np.zeros(params.W_k.shape)
    dW_v = np.zeros(params.W_v.shape)
    dW_gamma = np.zeros(params.W_gamma.shape)
    db_gamma = np.zeros(params.b_gamma.shape)
    d_inputs = np.zeros(trace.tokens.x.shape)
    carry = np.zeros((heads, key_dim, value_dim))

    segment_starts = sorted(trace.checkpoints, reverse=True)
    stop = trace.length
    for start in segment_starts:
        states = _segment_states(trace, start, stop)
        for step in range(stop - 1, start - 1, -1):
            state_now = states[step - start + 1]
            state_prev = states[step - start]
            g = grads_out[step]
            gamma = trace.gammas[step]
            phi_key = trace.phi_keys[step]
            written = trace.written[step]

            carry = carry + trace.queries[step][:, :, None] * g[:, None, :]
            dq = np.einsum("hkv,hv->hk", state_now, g)

            d_decayed = carry
            d_written = np.einsum("hkv,hk->hv", carry, phi_key)
            d_phi = np.einsum("hkv,hv->hk", carry, written)
            if delta:
                decayed = _decay(state_prev, gamma)
                dv = params.eta * d_written
                d_prediction = -params.eta * d_written
                d_decayed = d_decayed + phi_key[:, :, None] * d_prediction[:, None, :]
                d_phi = d_phi + np.einsum("hkv,hv->hk", decayed, d_prediction)
            else:
                dv = d_written

            d_gamma = np.einsum("hkv,hkv->hk", d_decayed, state_prev)
            carry = gamma[:, :, None] * d_decayed

            sig = trace.sigmoid[step]
            d_act = (d_gamma * sig * (1.0 - sig) * inside[step]).reshape(-1)
            dk = (d_phi * feature_map_grad(trace.raw_keys[step], params.feature_map)).reshape(-1)
            dq = dq.reshape(-1)
            dv = dv.reshape(-1)

            x_t = trace.tokens.x[step]
            dW_q += np.outer(dq, x_t)
            dW_k += np.outer(dk, x_t)
            dW_v += np.outer(dv, x_t)
            dW_gamma += np.outer(d_act, x_t)
            db_gamma += d_act
            d_inputs[step] = (
                params.W_q.T @ dq + params.W_k.T @ dk + params.W_v.T @ dv + params.W_gamma.T @ d_act
            )
        stop = start

    return Gradients(
        W_q=dW_q,
        W_k=dW_k,
        W_v=dW_v,
        W_gamma=dW_gamma,
        b_gamma=db_gamma,
        inputs=d_inputs,
        state_0=carry,
    )


def _objective(
    tokens: TokenSequence, state_0: RecurrentState, params: GLAParams, output_grads: np.ndarray
) -> float:
    outputs, _ = process_chunk(tokens, state_0, params)
    return float(np.sum(outputs * output_grads))


def _perturbed(
    name: str,
    index: tuple[int, ...],
    step: float,
    tokens: TokenSequence,
    state_0: RecurrentState,
    params: GLAParams,
) -> tuple[TokenSequence, RecurrentState, GLAParams]:
    if name == "inputs":
        values = tokens.x.copy()
        values[index] += step
        return TokenSequence(values, tokens.rope), state_0, params
    if name == "state_0":
        values = state_0.S.copy()
        values[index] += step
        return tokens, RecurrentState(values, state_0.step), params
    values = getattr(params, name).copy()
    values[index] += step
    return tokens, state_0, dataclasses.replace(params, **{name: values})


def finite_diff_check(
    tokens: TokenSequence,
    params: GLAParams,
    h: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    state_0: Optional[RecurrentState] = None,
    output_grads: Optional[np.ndarray] = None,
    gradients: Optional[Gradients] = None,
    seed: int = 0,
) -> FiniteDiffReport:
    """Compare analytic gradients against central differences for every entry.

    The relative error of one entry is |a - n| / max(|a|, |n|, 1e-3). Passing
    ``gradients`` checks those instead of a fresh :func:`backward` result.
    """

    if not h > 0:
        raise PreconditionError(f"Finite-difference step must be positive, got {h}")
    tokens = tokens.astype(np.float64)
    params = params.astype(np.float64)
    state_0 = state_0 if state_0 is not None else params.zero_state()
    if output_grads is None:
        rng = np.random.default_rng(seed)
        output_grads = rng.standard_normal((len(tokens), params.heads * params.value_dim))
    output_grads = np.asarray(output_grads, dtype=np.float64)
    if gradients is None:
        gradients = backward(record_forward(tokens, state_0, params), output_grads)

    worst = 0.0
    worst_entry: tuple[str, tuple[int, ...]] = ("", ())
    entries = 0
    for name, analytic in gradients.items():
        for index in np.ndindex(analytic.shape):
            plus = _objective(*_perturbed(name, index, h, tokens, state_0, params), output_grads)
            minus = _objective(*_perturbed(name, index, -h, tokens, state_0, params), output_grads)
            numeric = (plus - minus) / (2.0 * h)
            value = float(analytic[index])
            error = abs(value - numeric) / max(abs(value), abs(numeric), 1e-3)
            entries += 1
            if error > worst or not np.isfinite(error):
                worst, worst_entry = error, (name, tuple(int(i) for i in index))
    report = FiniteDiffReport(
        max_rel_error=float(worst),
        passed=bool(worst < tolerance),
        worst_entry=worst_entry,
        entries=entries,
    )
    if not report.passed:
        LOGGER.warning("Gradient check failed: %.3e at %s%s", worst, worst_entry[0], worst_entry[1])
    return report


__all__ = [
    "ForwardTrace",
    "Gradients",
    "FiniteDiffReport",
    "record_forward",
    "backward",
    "finite_diff_check",
]
