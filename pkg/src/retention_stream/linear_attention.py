"""Gated linear attention with channel-wise retention and a fixed-size recurrent state.

Per head the state is a ``key_dim x value_dim`` matrix. Each token produces a gate
vector gamma_t = clip(sigmoid(W_gamma x_t + b_gamma)), and the state evolves as

    S_t = diag(gamma_t) S_{t-1} + phi(k_t) v~_t^T,    o_t = S_t^T q_t.

Heads share the token-level gate, each reading its own slice of channels.
"""
from __future__ import annotations

import dataclasses
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericalError, PreconditionError, ShapeMismatchError

LOGGER = logging.getLogger(__name__)

GATE_EPS = 1e-6
SNAPSHOT_MAGIC = b"GLAS"
SNAPSHOT_VERSION = 1
_SNAPSHOT_HEADER = struct.Struct("<4sIII")


class FeatureMap(str, Enum):
    IDENTITY = "identity"
    SHIFTED_EXP = "shifted_exp"


class ValueRule(str, Enum):
    PLAIN = "plain"
    DELTA = "delta"


def feature_map(keys: np.ndarray, kind: FeatureMap) -> np.ndarray:
    """Apply phi to keys; ``shifted_exp`` is e^x below zero and x + 1 above (positive, C^1)."""

    if kind is FeatureMap.IDENTITY:
        return keys
    return np.where(keys > 0, keys + 1.0, np.exp(np.minimum(keys, 0.0)))


def feature_map_grad(keys: np.ndarray, kind: FeatureMap) -> np.ndarray:
    if kind is FeatureMap.IDENTITY:
        return np.ones_like(keys)
    return np.where(keys > 0, 1.0, np.exp(np.minimum(keys, 0.0)))


def _frozen(array: np.ndarray | Sequence[float], dtype: np.dtype | type = np.float64) -> np.ndarray:
    values = np.array(array, dtype=dtype, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class GLAParams:
    """Projection and gate parameters of one gated linear attention layer.

    Matrices map ``d_model`` inputs: ``W_q``/``W_k``/``W_gamma`` have
    ``heads * key_dim`` rows, ``W_v`` has ``heads * value_dim`` rows.
    """

    W_gamma: np.ndarray
    b_gamma: np.ndarray
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    heads: int = 1
    feature_map: FeatureMap = FeatureMap.IDENTITY
    value_rule: ValueRule = ValueRule.PLAIN
    eta: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_map", FeatureMap(self.feature_map))
        object.__setattr__(self, "value_rule", ValueRule(self.value_rule))
        dtype = np.asarray(self.W_q).dtype
        dtype = dtype if dtype in (np.float32, np.float64) else np.float64
        for name in ("W_gamma", "b_gamma", "W_q", "W_k", "W_v"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        if self.heads < 1:
            raise PreconditionError(f"heads must be positive, got {self.heads}")
        d_model = self.W_q.shape[1] if self.W_q.ndim == 2 else -1
        channels = self.W_q.shape[0] if self.W_q.ndim == 2 else -1
        for name in ("W_gamma", "W_k"):
            if getattr(self, name).shape != (channels, d_model):
                raise ShapeMismatchError(
                    f"{name} has shape {getattr(self, name).shape}, expected {(channels, d_model)}"
                )
        if self.b_gamma.shape != (channels,):
            raise ShapeMismatchError(f"b_gamma has shape {self.b_gamma.shape}, expected {(channels,)}")
        if self.W_v.ndim != 2 or self.W_v.shape[1] != d_model:
            raise ShapeMismatchError(f"W_v has shape {self.W_v.shape}, expected (*, {d_model})")
        if channels % self.heads or self.W_v.shape[0] % self.heads:
            raise ShapeMismatchError(f"Projection rows are not divisible by heads={self.heads}")
        if self.eta <= 0:
            raise DomainError(f"eta must be positive, got {self.eta}")

    @property
    def d_model(self) -> int:
        return int(self.W_q.shape[1])

    @property
    def key_dim(self) -> int:
        return int(self.W_q.shape[0] // self.heads)

    @property
    def value_dim(self) -> int:
        return int(self.W_v.shape[0] // self.heads)

    @property
    def dtype(self) -> np.dtype:
        return self.W_q.dtype

    def astype(self, dtype: np.dtype | type) -> "GLAParams":
        return dataclasses.replace(
            self,
            **{name: getattr(self, name).astype(dtype) for name in ("W_gamma", "b_gamma", "W_q", "W_k", "W_v")},
        )

    def zero_state(self) -> "RecurrentState":
        return RecurrentState.zeros(self.heads, self.key_dim, self.value_dim, dtype=self.dtype)

    @classmethod
    def bare(
        cls,
        key_dim: int,
        value_dim: int,
        heads: int = 1,
        *,
        value_rule: ValueRule | str = ValueRule.PLAIN,
        eta: float = 1.0,
    ) -> "GLAParams":
        """Zero projections from a 1-d input; for driving :func:`state_update` with explicit keys."""

        channels = heads * key_dim
        return cls(
            W_gamma=np.zeros((channels, 1)),
            b_gamma=np.zeros(channels),
            W_q=np.zeros((channels, 1)),
            W_k=np.zeros((channels, 1)),
            W_v=np.zeros((heads * value_dim, 1)),
            heads=heads,
            value_rule=ValueRule(value_rule),
            eta=eta,
        )

    @classmethod
    def initialize(
        cls,
        d_model: int,
        key_dim: int,
        value_dim: int,
        heads: int = 1,
        *,
        seed: int = 0,
        gate_bias: float = 4.0,
        init_scale: float = 0.1,
        feature_map: FeatureMap | str = FeatureMap.IDENTITY,
        value_rule: ValueRule | str = ValueRule.PLAIN,
        eta: float = 1.0,
    ) -> "GLAParams":
        """Small uniform projections and a high gate bias (gamma near 1 at init)."""

        rng = np.random.default_rng(seed)
        channels = heads * key_dim

        def uniform(rows: int) -> np.ndarray:
            return rng.uniform(-init_scale, init_scale, size=(rows, d_model))

        return cls(
            W_gamma=uniform(channels),
            b_gamma=np.full(channels, gate_bias),
            W_q=uniform(channels),
            W_k=uniform(channels),
            W_v=uniform(heads * value_dim),
            heads=heads,
            feature_map=FeatureMap(feature_map),
            value_rule=ValueRule(value_rule),
            eta=eta,
        )


@dataclass(frozen=True, eq=False)
class RecurrentState:
    """Per-head state matrices ``S`` of shape ``(heads, key_dim, value_dim)`` and a step counter."""

    S: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        matrix = np.asarray(self.S)
        if matrix.ndim == 2:
            matrix = matrix[None]
        if matrix.ndim != 3:
            raise ShapeMismatchError(f"State must be (heads, key_dim, value_dim), got {matrix.shape}")
        if self.step < 0:
            raise PreconditionError(f"step must be nonnegative, got {self.step}")
        if not np.all(np.isfinite(matrix)):
            raise NumericalError(f"Recurrent state became non-finite at step {self.step}")
        object.__setattr__(self, "S", _frozen(matrix, matrix.dtype if matrix.dtype in (np.float32, np.float64) else np.float64))

    @classmethod
    def zeros(cls, heads: int, key_dim: int, value_dim: int, dtype: np.dtype | type = np.float64) -> "RecurrentState":
        return cls(np.zeros((heads, key_dim, value_dim), dtype=dtype))

    @property
    def head_count(self) -> int:
        return int(self.S.shape[0])

    @property
    def key_dim(self) -> int:
        return int(self.S.shape[1])

    @property
    def value_dim(self) -> int:
        return int(self.S.shape[2])

    @property
    def nbytes(self) -> int:
        return int(self.S.nbytes)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.S))

    def to_bytes(self) -> bytes:
        """Snapshot: ``GLAS`` header then ``key_dim x (heads*value_dim)`` little-endian f64, row-major."""

        header = _SNAPSHOT_HEADER.pack(
            SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.key_dim, self.value_dim * self.head_count
        )
        # Heads are concatenated along the value axis.
        flat = self.S.transpose(1, 0, 2).reshape(self.key_dim, -1)
        return header + np.ascontiguousarray(flat, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, heads: int = 1, step: int = 0) -> "RecurrentState":
        if len(data) < _SNAPSHOT_HEADER.size:
            raise PreconditionError("Snapshot is shorter than its header")
        magic, version, key_dim, columns = _SNAPSHOT_HEADER.unpack_from(data)
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise PreconditionError(f"Unsupported snapshot header {magic!r} v{version}")
        if columns % heads:
            raise ShapeMismatchError(f"{columns} value columns cannot be split into {heads} heads")
        payload = np.frombuffer(data, dtype="<f8", offset=_SNAPSHOT_HEADER.size)
        if payload.size != key_dim * columns:
            raise ShapeMismatchError(
                f"Snapshot payload holds {payload.size} values, expected {key_dim * columns}"
            )
        flat = payload.astype(np.float64).reshape(key_dim, heads, columns // heads)
        return cls(flat.transpose(1, 0, 2), step=step)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """A finite sequence of ``d_model`` token vectors with optional RoPE indices."""

    x: np.ndarray
    rope: Optional[tuple] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.x)
        if values.ndim == 1:
            values = values[None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise PreconditionError(f"Token sequence must be (T >= 1, d_model), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Token vectors must be finite")
        object.__setattr__(self, "x", _frozen(values, values.dtype if values.dtype in (np.float32, np.float64) else np.float64))
        if self.rope is not None:
            rope = tuple(self.rope)
            if len(rope) != values.shape[0]:
                raise ShapeMismatchError("RoPE indices must match the token count")
            object.__setattr__(self, "rope", rope)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.x.shape[1])

    def slice(self, start: int, stop: int) -> "TokenSequence":
        rope = self.rope[start:stop] if self.rope is not None else None
        return TokenSequence(self.x[start:stop], rope)

    def chunks(self, sizes: Sequence[int]) -> Iterator["TokenSequence"]:
        if sum(sizes) != len(self):
            raise ShapeMismatchError(f"Chunk sizes {list(sizes)} do not cover {len(self)} tokens")
        start = 0
        for size in sizes:
            yield self.slice(start, start + size)
            start += size

    def astype(self, dtype: np.dtype | type) -> "TokenSequence":
        return TokenSequence(self.x.astype(dtype), self.rope)


@dataclass(frozen=True, eq=False)
class StepOutput:
    """Everything one recurrence step produced; used for tracing and measurement."""

    output: np.ndarray
    state: RecurrentState
    gamma: np.ndarray
    phi_key: np.ndarray
    value_written: np.ndarray


# --- objective -------------------------------------------------------------------


def _residual_sq(S: np.ndarray, key: np.ndarray, value: np.ndarray) -> float:
    residual = S.T @ key - value
    return float(residual @ residual)


def discounted_objective(
    S: np.ndarray,
    keys: Sequence[np.ndarray],
    values: Sequence[np.ndarray],
    gammas: Sequence[float],
) -> float:
    """J_t(S) = sum_i (prod_{j=i+1}^t gamma_j) ||S^T k_i - v_i||^2."""

    if not (len(keys) == len(values) == len(gammas)) or len(keys) < 1:
        raise ShapeMismatchError(
            f"keys/values/gammas must share a positive length, got {len(keys)}/{len(values)}/{len(gammas)}"
        )
    matrix = np.asarray(S, dtype=np.float64)
    steps = len(keys)
    total = 0.0
    for i in range(steps):
        discount = float(np.prod(np.asarray(gammas[i + 1 :], dtype=np.float64)))
        total += discount * _residual_sq(matrix, np.asarray(keys[i]), np.asarray(values[i]))
    return total


def recursive_objective_step(
    J_prev: float, S: np.ndarray, k_t: np.ndarray, v_t: np.ndarray, gamma_t: float
) -> float:
    """J_t = gamma_t * J_{t-1} + ||S^T k_t - v_t||^2."""

    if J_prev < 0:
        raise PreconditionError(f"J_prev must be nonnegative, got {J_prev}")
    return gamma_t * J_prev + _residual_sq(np.asarray(S, dtype=np.float64), np.asarray(k_t), np.asarray(v_t))


# --- gate, update, readout ------------------------------------------------------


def gate_preactivation(x_t: np.ndarray, params: GLAParams) -> np.ndarray:
    return params.W_gamma @ x_t + params.b_gamma


def gate(x_t: np.ndarray, params: GLAParams) -> np.ndarray:
    """Channel retention vector clip(sigmoid(W_gamma x + b_gamma), eps, 1 - eps)."""

    x_t = np.asarray(x_t)
    if not np.all(np.isfinite(x_t)):
        raise DomainError("Gate input must be finite")
    if x_t.shape != (params.d_model,):
        raise ShapeMismatchError(f"Gate input has shape {x_t.shape}, expected ({params.d_model},)")
    return np.clip(expit(gate_preactivation(x_t, params)), GATE_EPS, 1.0 - GATE_EPS)


def _per_head(vector: np.ndarray, heads: int, width: int, label: str) -> np.ndarray:
    vector = np.asarray(vector)
    if vector.ndim == 0:
        return np.full((heads, width), vector)
    if vector.size != heads * width:
        raise ShapeMismatchError(f"{label} has {vector.size} entries, expected {heads * width}")
    return vector.reshape(heads, width)


def _decay(S: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return gamma[..., None] * S


def _written_values(
    decayed: np.ndarray, phi_key: np.ndarray, value: np.ndarray, rule: ValueRule, eta: float
) -> np.ndarray:
    if rule is ValueRule.PLAIN:
        return value
    # Delta target is the prediction of the decayed state.
    prediction = np.einsum("hkv,hk->hv", decayed, phi_key)
    return eta * (value - prediction)


def _write(decayed: np.ndarray, phi_key: np.ndarray, written: np.ndarray) -> np.ndarray:
    return decayed + phi_key[..., :, None] * written[..., None, :]


def _apply_update(
    state: RecurrentState,
    k_t: np.ndarray,
    v_t: np.ndarray,
    gamma: np.ndarray,
    params: GLAParams,
) -> tuple[RecurrentState, np.ndarray, np.ndarray, np.ndarray]:
    heads, key_dim, value_dim = state.S.shape
    if (heads, key_dim, value_dim) != (params.heads, params.key_dim, params.value_dim):
        raise ShapeMismatchError(
            f"State shape {state.S.shape} does not match params "
            f"{(params.heads, params.key_dim, params.value_dim)}"
        )
    keys = _per_head(k_t, heads, key_dim, "k_t")
    values = _per_head(v_t, heads, value_dim, "v_t")
    gammas = _per_head(gamma, heads, key_dim, "gamma")
    phi_key = feature_map(keys, params.feature_map)
    decayed = _decay(state.S, gammas)
    written = _written_values(decayed, phi_key, values, params.value_rule, params.eta)
    new_state = RecurrentState(_write(decayed, phi_key, written), step=state.step + 1)
    return new_state, gammas, phi_key, written


def state_update(
    state: RecurrentState,
    k_t: np.ndarray,
    v_t: np.ndarray,
    gamma: np.ndarray,
    params: GLAParams,
) -> RecurrentState:
    """S' = diag(gamma) S + phi(k) v~^T with v~ chosen by ``params.value_rule``.

    ``gamma`` may be a scalar or a ``heads * key_dim`` vector; it is not clamped here.
    """

    return _apply_update(state, k_t, v_t, gamma, params)[0]


def readout(q_t: np.ndarray, state: RecurrentState) -> np.ndarray:
    """o_t = S^T q_t per head, concatenated over heads."""

    queries = _per_head(q_t, state.head_count, state.key_dim, "q_t")
    return np.einsum("hkv,hk->hv", state.S, queries).reshape(-1)


def ttt_step(
    state: RecurrentState, k_t: np.ndarray, v_t: np.ndarray, gamma_t: float, eta: float
) -> RecurrentState:
    """One discounted online-regression step.

    S' = gamma S + eta k (v - (gamma S)^T k)^T, i.e. gradient descent on
    ||S^T k - v||^2 / 2 started from the discounted iterate gamma S.
    """

    if eta < 0:
        raise DomainError(f"eta must be nonnegative, got {eta}")
    heads, key_dim, value_dim = state.S.shape
    keys = _per_head(k_t, heads, key_dim, "k_t")
    values = _per_head(v_t, heads, value_dim, "v_t")
    decayed = _decay(state.S, np.full((heads, key_dim), gamma_t, dtype=state.S.dtype))
    residual = values - np.einsum("hkv,hk->hv", decayed, keys)
    return RecurrentState(_write(decayed, keys, eta * residual), step=state.step + 1)


# --- streaming ------------------------------------------------------------------


def _project(x_t: np.ndarray, params: GLAParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return params.W_q @ x_t, params.W_k @ x_t, params.W_v @ x_t


def iter_chunk(
    tokens: TokenSequence, state: RecurrentState, params: GLAParams
) -> Iterator[StepOutput]:
    """Run gate -> update -> readout causally, yielding after every token."""

    if tokens.d_model != params.d_model:
        raise ShapeMismatchError(f"Tokens have d_model={tokens.d_model}, params expect {params.d_model}")
    for x_t in tokens.x:
        gamma = gate(x_t, params)
        q_t, k_t, v_t = _project(x_t, params)
        state, gammas, phi_key, written = _apply_update(state, k_t, v_t, gamma, params)
        yield StepOutput(readout(q_t, state), state, gammas, phi_key, written)


def process_chunk(
    tokens: TokenSequence, state: RecurrentState, params: GLAParams
) -> tuple[np.ndarray, RecurrentState]:
    """Process one chunk; the returned state carries over to the next chunk."""

    outputs = np.empty((len(tokens), params.heads * params.value_dim), dtype=params.dtype)
    for index, step in enumerate(iter_chunk(tokens, state, params)):
        outputs[index] = step.output
        state = step.state
    LOGGER.debug("Processed chunk of %d tokens; state at step %d", len(tokens), state.step)
    return outputs, state


def process_stream(
    tokens: TokenSequence, state: RecurrentState, params: GLAParams, chunk_sizes: Sequence[int]
) -> tuple[np.ndarray, RecurrentState]:
    """Process ``tokens`` split into consecutive chunks of the given sizes."""

    outputs = []
    for chunk in tokens.chunks(chunk_sizes):
        chunk_outputs, state = process_chunk(chunk, state, params)
        outputs.append(chunk_outputs)
    return np.concatenate(outputs), state


def chunk_sizes(length: int, chunk_size: int) -> list[int]:
    full, rest = divmod(length, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def state_row_norms(state: RecurrentState) -> np.ndarray:
    """Probe features: one Euclidean row norm per key channel, heads concatenated."""

    return np.linalg.norm(state.S, axis=2).reshape(-1)


__all__ = [
    "GATE_EPS",
    "FeatureMap",
    "ValueRule",
    "GLAParams",
    "RecurrentState",
    "TokenSequence",
    "StepOutput",
    "feature_map",
    "feature_map_grad",
    "discounted_objective",
    "recursive_objective_step",
    "gate",
    "gate_preactivation",
    "state_update",
    "readout",
    "ttt_step",
    "iter_chunk",
    "process_chunk",
    "process_stream",
    "chunk_sizes",
    "state_row_norms",
]
