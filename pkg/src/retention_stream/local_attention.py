"""Windowed causal softmax attention with 3-axis rotary positions and head-wise gates.

Also hosts the attention-dilution analysis: how much softmax mass a query can keep on
its geometrically relevant keys as the causal range grows.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, softmax

from .config import DEFAULT_WINDOW
from .errors import PreconditionError, ShapeMismatchError
from .models import BOUND_TOLERANCE, DilutionRow

LOGGER = logging.getLogger(__name__)

ROPE_BASE = 10000.0
NORMALIZATION_TOLERANCE = 1e-9
RANDOM_DOMINANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RopeIndex:
    """Position triple (t+1, y+1, x+1); special tokens sit at (0, 0, 0)."""

    pi: tuple[int, int, int]
    special: bool = False

    def __post_init__(self) -> None:
        pi = tuple(int(value) for value in self.pi)
        if len(pi) != 3:
            raise ShapeMismatchError(f"RopeIndex needs three components, got {self.pi}")
        if self.special and pi != (0, 0, 0):
            raise PreconditionError(f"Special tokens must use (0, 0, 0), got {pi}")
        if not self.special and min(pi) < 1:
            raise PreconditionError(f"Patch positions are 1-based, got {pi}")
        object.__setattr__(self, "pi", pi)

    @classmethod
    def for_patch(cls, t: int, y: int, x: int) -> "RopeIndex":
        """Index of the patch at 0-based frame ``t`` and grid cell ``(y, x)``."""

        return cls((t + 1, y + 1, x + 1))

    @classmethod
    def special_token(cls) -> "RopeIndex":
        return cls((0, 0, 0), special=True)


def _rotate_half(vec: np.ndarray) -> np.ndarray:
    first, second = np.split(vec, 2, axis=-1)
    return np.concatenate((-second, first), axis=-1)


def rope_rotate(vec: np.ndarray, idx: RopeIndex, base: float = ROPE_BASE) -> np.ndarray:
    """Rotate each contiguous third (time, height, width) by its axis position."""

    vec = np.asarray(vec, dtype=np.float64)
    dim = vec.shape[-1]
    if dim % 6:
        raise ShapeMismatchError(f"RoPE needs a dimension divisible by 6, got {dim}")
    if idx.special:
        return vec.copy()
    third = dim // 3
    inv_freq = base ** (-np.arange(0, third, 2, dtype=np.float64) / third)
    parts = []
    for axis, position in enumerate(idx.pi):
        segment = vec[..., axis * third : (axis + 1) * third]
        angles = position * inv_freq
        emb = np.concatenate((angles, angles))
        parts.append(segment * np.cos(emb) + _rotate_half(segment) * np.sin(emb))
    return np.concatenate(parts, axis=-1)


def temporal_index_reset(indices: Sequence[RopeIndex], period: int) -> list[RopeIndex]:
    """Wrap the temporal component to 1 + (t mod period); spatial axes and special tokens stay."""

    if period < 1:
        raise PreconditionError(f"Reset period must be positive, got {period}")
    reset = []
    for idx in indices:
        if idx.special:
            reset.append(idx)
            continue
        frame = idx.pi[0] - 1
        reset.append(RopeIndex((1 + frame % period, idx.pi[1], idx.pi[2])))
    return reset


# --- softmax attention ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AttentionResult:
    outputs: np.ndarray
    weights: np.ndarray


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with masked-out entries given exactly zero weight."""

    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape:
        raise ShapeMismatchError(f"scores {scores.shape} and mask {mask.shape} differ")
    if not np.all(mask.any(axis=-1)):
        raise PreconditionError("Every query needs at least one visible key")
    return softmax(np.where(mask, scores, -np.inf), axis=-1)


def causal_softmax_attention(
    q_window: np.ndarray,
    k_window: np.ndarray,
    v_window: np.ndarray,
    max_window: Optional[int] = DEFAULT_WINDOW,
) -> AttentionResult:
    """Scaled dot-product attention under a causal mask.

    More than ``max_window`` keys is an error; ``None`` lifts the cap.

    With fewer queries than keys the queries are the last positions of the window,
    so query ``j`` sees keys ``0 .. Tk - Tq + j``.
    """

    q_window = np.atleast_2d(np.asarray(q_window, dtype=np.float64))
    k_window = np.atleast_2d(np.asarray(k_window, dtype=np.float64))
    v_window = np.asarray(v_window, dtype=np.float64)
    if v_window.ndim == 1:
        v_window = v_window[:, None]
    queries, keys = q_window.shape[0], k_window.shape[0]
    if queries == 0 or keys == 0:
        raise PreconditionError("Attention window is empty")
    if max_window is not None and keys > max_window:
        raise PreconditionError(f"Window of {keys} keys exceeds the configured {max_window}")
    if queries > keys or q_window.shape[1] != k_window.shape[1] or v_window.shape[0] != keys:
        raise ShapeMismatchError(
            f"Incompatible window shapes q={q_window.shape} k={k_window.shape} v={v_window.shape}"
        )
    if not (np.all(np.isfinite(q_window)) and np.all(np.isfinite(k_window)) and np.all(np.isfinite(v_window))):
        raise PreconditionError("Attention inputs must be finite")

    scores = q_window @ k_window.T / math.sqrt(q_window.shape[1])
    positions = np.arange(keys - queries, keys)
    mask = np.arange(keys)[None, :] <= positions[:, None]
    weights = masked_softmax(scores, mask)
    return AttentionResult(outputs=weights @ v_window, weights=weights)


# --- head gates ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HeadGateParams:
    """Reliability gate g = sigmoid(W_g x_bar + b_g), one scalar per head."""

    W_g: np.ndarray
    b_g: np.ndarray

    def __post_init__(self) -> None:
        W_g = np.array(self.W_g, dtype=np.float64)
        b_g = np.array(self.b_g, dtype=np.float64).reshape(-1)
        if W_g.ndim != 2 or W_g.shape[0] != b_g.size:
            raise ShapeMismatchError(f"W_g {W_g.shape} does not match b_g {b_g.shape}")
        W_g.setflags(write=False)
        b_g.setflags(write=False)
        object.__setattr__(self, "W_g", W_g)
        object.__setattr__(self, "b_g", b_g)

    @property
    def heads(self) -> int:
        return int(self.b_g.size)

    def gates(self, pooled: np.ndarray) -> np.ndarray:
        pooled = np.asarray(pooled, dtype=np.float64)
        if pooled.shape != (self.W_g.shape[1],):
            raise ShapeMismatchError(f"Pooled feature has shape {pooled.shape}, expected ({self.W_g.shape[1]},)")
        return expit(self.W_g @ pooled + self.b_g)


def head_gate_apply(pooled: np.ndarray, head_outputs: np.ndarray, params: HeadGateParams) -> np.ndarray:
    """Scale each head's output ``y_h`` by its gate ``g_h``."""

    head_outputs = np.asarray(head_outputs, dtype=np.float64)
    if head_outputs.shape[0] != params.heads:
        raise ShapeMismatchError(f"Got {head_outputs.shape[0]} head outputs for {params.heads} gates")
    gates = params.gates(pooled)
    return gates.reshape((-1,) + (1,) * (head_outputs.ndim - 1)) * head_outputs


def pool_window(x_window: np.ndarray, indices: Optional[Sequence[RopeIndex]] = None) -> np.ndarray:
    """Mean of the window's non-special token features."""

    x_window = np.atleast_2d(np.asarray(x_window, dtype=np.float64))
    if indices is None:
        return x_window.mean(axis=0)
    if len(indices) != x_window.shape[0]:
        raise ShapeMismatchError("Need one RopeIndex per window token")
    keep = np.array([not idx.special for idx in indices])
    if not keep.any():
        raise PreconditionError("Window holds only special tokens; nothing to pool")
    return x_window[keep].mean(axis=0)


@dataclass(frozen=True, eq=False)
class LocalAttentionParams:
    """Per-head projections (``heads * head_dim`` rows) plus the head gate.

    ``window`` caps the number of tokens one call may attend over.
    """

    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    gate: HeadGateParams
    heads: int
    base: float = ROPE_BASE
    window: int = DEFAULT_WINDOW

    def __post_init__(self) -> None:
        for name in ("W_q", "W_k", "W_v"):
            matrix = np.array(getattr(self, name), dtype=np.float64)
            matrix.setflags(write=False)
            object.__setattr__(self, name, matrix)
        if self.W_q.shape != self.W_k.shape or self.W_q.shape[0] % self.heads:
            raise ShapeMismatchError("W_q and W_k must share a (heads * head_dim, d_model) shape")
        if self.gate.heads != self.heads:
            raise ShapeMismatchError(f"Gate has {self.gate.heads} heads, attention has {self.heads}")
        if self.head_dim % 6:
            raise ShapeMismatchError(f"head_dim must be divisible by 6, got {self.head_dim}")
        if self.window < 1:
            raise PreconditionError(f"window must be positive, got {self.window}")

    @property
    def head_dim(self) -> int:
        return int(self.W_q.shape[0] // self.heads)

    @classmethod
    def initialize(
        cls,
        d_model: int,
        head_dim: int,
        heads: int,
        *,
        seed: int = 0,
        init_scale: float = 0.1,
        gate_bias: float = 2.0,
        window: int = DEFAULT_WINDOW,
    ) -> "LocalAttentionParams":
        rng = np.random.default_rng(seed)
        rows = heads * head_dim

        def uniform(shape: tuple[int, int]) -> np.ndarray:
            return rng.uniform(-init_scale, init_scale, size=shape)

        return cls(
            W_q=uniform((rows, d_model)),
            W_k=uniform((rows, d_model)),
            W_v=uniform((rows, d_model)),
            gate=HeadGateParams(np.zeros((heads, d_model)), np.full(heads, gate_bias)),
            heads=heads,
            window=window,
        )


def local_attention_window(
    x_window: np.ndarray, indices: Sequence[RopeIndex], params: LocalAttentionParams
) -> np.ndarray:
    """Causal attention over one window; head gates apply before heads are concatenated."""

    x_window = np.atleast_2d(np.asarray(x_window, dtype=np.float64))
    if len(indices) != x_window.shape[0]:
        raise ShapeMismatchError("Need one RopeIndex per window token")
    heads, head_dim = params.heads, params.head_dim
    q = (x_window @ params.W_q.T).reshape(-1, heads, head_dim)
    k = (x_window @ params.W_k.T).reshape(-1, heads, head_dim)
    v = (x_window @ params.W_v.T).reshape(-1, heads, head_dim)
    head_outputs = []
    for head in range(heads):
        q_rot = np.stack([rope_rotate(q[i, head], idx, params.base) for i, idx in enumerate(indices)])
        k_rot = np.stack([rope_rotate(k[i, head], idx, params.base) for i, idx in enumerate(indices)])
        result = causal_softmax_attention(q_rot, k_rot, v[:, head], max_window=params.window)
        head_outputs.append(result.outputs)
    gated = head_gate_apply(pool_window(x_window, indices), np.stack(head_outputs), params.gate)
    return gated.transpose(1, 0, 2).reshape(x_window.shape[0], heads * head_dim)


# --- dilution -------------------------------------------------------------------------


def relevant_mass(weights: np.ndarray, relevant_set: Sequence[int]) -> float:
    """Attention mass on ``relevant_set`` (0-based key positions)."""

    weights = np.asarray(weights, dtype=np.float64).ravel()
    total = float(weights.sum())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise PreconditionError(f"Attention weights sum to {total!r}, not 1")
    indices = np.asarray(sorted(set(int(i) for i in relevant_set)), dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= weights.size):
        raise PreconditionError(f"Relevant positions outside 0..{weights.size - 1}")
    return float(weights[indices].sum()) if indices.size else 0.0


def _most_recent(w_geo: int) -> Callable[[int], Sequence[int]]:
    def relevant(t: int) -> Sequence[int]:
        return range(max(0, t - w_geo), t)

    return relevant


@dataclass(frozen=True)
class DilutionConfig:
    """Co-visibility budget ``w_geo`` and score bound ``M``.

    ``relevant_set(t)`` maps a causal range of ``t`` keys to the 0-based positions
    relevant to the query; by default the most recent ``w_geo`` keys.
    """

    w_geo: int
    M: float
    relevant_set: Optional[Callable[[int], Sequence[int]]] = None

    def __post_init__(self) -> None:
        if self.w_geo < 1:
            raise PreconditionError(f"w_geo must be positive, got {self.w_geo}")
        if not self.M > 0:
            raise PreconditionError(f"Score bound M must be positive, got {self.M}")
        if self.relevant_set is None:
            object.__setattr__(self, "relevant_set", _most_recent(self.w_geo))

    def relevant(self, t: int) -> list[int]:
        indices = sorted(set(int(i) for i in self.relevant_set(t)))
        if len(indices) > self.w_geo:
            raise PreconditionError(f"Relevant set of size {len(indices)} exceeds w_geo={self.w_geo}")
        return indices

    @property
    def crossing_point(self) -> float:
        """Length at which the bound equals one half."""

        return self.w_geo * (1.0 + math.exp(2.0 * self.M))


def dilution_bound(t: int, cfg: DilutionConfig) -> float:
    """Largest relevant mass reachable with scores clipped to [-M, M]."""

    if t <= cfg.w_geo:
        raise PreconditionError(f"Bound is vacuous for t={t} <= w_geo={cfg.w_geo}")
    return 1.0 / (1.0 + (t - cfg.w_geo) / cfg.w_geo * math.exp(-2.0 * cfg.M))


def mass_for_scores(scores: np.ndarray, relevant: Sequence[int]) -> float:
    values = np.zeros((scores.size, 1))
    result = causal_softmax_attention(np.ones((1, 1)), scores[:, None], values, max_window=None)
    return relevant_mass(result.weights[0], relevant)


@dataclass(frozen=True)
class DilutionReport:
    rows: tuple[DilutionRow, ...]
    random_trials: int
    random_max_excess: float
    crossing_point: float

    @property
    def violations(self) -> int:
        return sum(row.violated for row in self.rows)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.random_max_excess <= RANDOM_DOMINANCE_TOLERANCE

    def write_csv(self, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", "bound", "measured_mass", "violated"])
            for row in self.rows:
                writer.writerow(
                    [row.t, format(row.bound, ".17g"), format(row.measured_mass, ".17g"), int(row.violated)]
                )
        return target


def verify_dilution(trials: int, cfg: DilutionConfig, t_max: int, seed: int = 0) -> DilutionReport:
    """Check best-case relevant mass against :func:`dilution_bound` for every t in (w_geo, t_max].

    Random clipped score draws must never beat the best case at the same length.
    """

    if trials < 1:
        raise PreconditionError(f"trials must be positive, got {trials}")
    if t_max <= cfg.w_geo:
        raise PreconditionError(f"t_max must exceed w_geo={cfg.w_geo}, got {t_max}")
    rows = []
    best_case: dict[int, float] = {}
    for t in range(cfg.w_geo + 1, t_max + 1):
        relevant = cfg.relevant(t)
        scores = np.full(t, -cfg.M)
        scores[relevant] = cfg.M
        mass = mass_for_scores(scores, relevant)
        bound = dilution_bound(t, cfg)
        best_case[t] = mass
        rows.append(DilutionRow(t=t, bound=bound, measured_mass=mass, violated=mass > bound + BOUND_TOLERANCE))

    rng = np.random.default_rng(seed)
    worst_excess = -math.inf
    for _ in range(trials):
        t = int(rng.integers(cfg.w_geo + 1, t_max + 1))
        scores = rng.uniform(-cfg.M, cfg.M, size=t)
        mass = mass_for_scores(scores, cfg.relevant(t))
        worst_excess = max(worst_excess, mass - best_case[t])

    report = DilutionReport(
        rows=tuple(rows),
        random_trials=trials,
        random_max_excess=worst_excess,
        crossing_point=cfg.crossing_point,
    )
    LOGGER.info(
        "Dilution check over t in (%d, %d]: %d violations, random excess %.3e",
        cfg.w_geo,
        t_max,
        report.violations,
        worst_excess,
    )
    return report


__all__ = [
    "ROPE_BASE",
    "RopeIndex",
    "rope_rotate",
    "temporal_index_reset",
    "AttentionResult",
    "masked_softmax",
    "causal_softmax_attention",
    "HeadGateParams",
    "head_gate_apply",
    "pool_window",
    "LocalAttentionParams",
    "local_attention_window",
    "relevant_mass",
    "mass_for_scores",
    "DilutionConfig",
    "dilution_bound",
    "DilutionReport",
    "verify_dilution",
]
