"""Metric scale readout, scale application, relative pose fusion and the composite loss."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError, NumericalError, PreconditionError, ShapeMismatchError
from .kernel_model import partition_channels
from .linear_attention import RecurrentState
from .models import LossBreakdown

LOGGER = logging.getLogger(__name__)

EXP_LIMIT = 700.0
UNIT_TOLERANCE = 1e-9
SMOOTH_L1_BETA = 1.0


def _finite_vector(values: np.ndarray | Sequence[float], label: str, size: int | None = None) -> np.ndarray:
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if size is not None and vector.size != size:
        raise ShapeMismatchError(f"{label} must have {size} entries, got {vector.size}")
    if not np.all(np.isfinite(vector)):
        raise DomainError(f"{label} must be finite")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class MetricToken:
    z: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", _finite_vector(self.z, "Metric token"))


@dataclass(frozen=True, eq=False)
class ScaleHead:
    """Affine map g(z) = weights . z + bias."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _finite_vector(self.weights, "Scale head weights"))
        if not math.isfinite(self.bias):
            raise DomainError(f"Scale head bias must be finite, got {self.bias}")

    def __call__(self, z: np.ndarray) -> float:
        return float(self.weights @ z + self.bias)


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """Translation (scene units), unit quaternion (w, x, y, z) with w >= 0, focal in pixels."""

    translation_raw: np.ndarray
    rotation: np.ndarray
    focal: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation_raw", _finite_vector(self.translation_raw, "Translation", 3))
        rotation = _finite_vector(self.rotation, "Rotation", 4)
        if abs(float(np.linalg.norm(rotation)) - 1.0) > UNIT_TOLERANCE:
            raise DomainError(f"Rotation quaternion must be unit length, got norm {np.linalg.norm(rotation)}")
        if rotation[0] < 0:
            raise DomainError("Rotation quaternion must be sign-canonical (w >= 0)")
        object.__setattr__(self, "rotation", rotation)
        if not self.focal > 0 or not math.isfinite(self.focal):
            raise DomainError(f"focal must be positive, got {self.focal}")

    @classmethod
    def create(
        cls,
        translation: Sequence[float],
        rotation: Sequence[float],
        focal: float,
    ) -> "PoseEstimate":
        """Build a pose, normalizing and sign-canonicalizing the quaternion."""

        return cls(np.asarray(translation, dtype=np.float64), canonical_quaternion(rotation), float(focal))


@dataclass(frozen=True, eq=False)
class DepthMap:
    depth_raw: np.ndarray
    confidence: np.ndarray

    def __post_init__(self) -> None:
        depth = np.array(self.depth_raw, dtype=np.float64)
        confidence = np.array(self.confidence, dtype=np.float64)
        if depth.shape != confidence.shape:
            raise ShapeMismatchError(f"Depth {depth.shape} and confidence {confidence.shape} differ")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise DomainError("Depth entries must be finite and nonnegative")
        if np.any(confidence <= 0) or np.any(confidence > 1):
            raise DomainError("Confidence entries must lie in (0, 1]")
        depth.setflags(write=False)
        confidence.setflags(write=False)
        object.__setattr__(self, "depth_raw", depth)
        object.__setattr__(self, "confidence", confidence)


@dataclass(frozen=True)
class LossWeights:
    lambda_pose: float = 1.0
    lambda_depth: float = 1.0
    lambda_scale: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_pose, self.lambda_depth, self.lambda_scale) < 0:
            raise DomainError("Loss weights must be nonnegative")


@dataclass(frozen=True)
class FramePrediction:
    pose: PoseEstimate
    depth: DepthMap
    scale: float


@dataclass(frozen=True)
class FrameTarget:
    pose: PoseEstimate
    depth: DepthMap
    scale: float
    is_metric: bool = False


def canonical_quaternion(rotation: Sequence[float]) -> np.ndarray:
    quaternion = np.array(rotation, dtype=np.float64).reshape(-1)
    if quaternion.size != 4:
        raise ShapeMismatchError(f"Quaternion must have 4 entries, got {quaternion.size}")
    norm = float(np.linalg.norm(quaternion))
    if not norm > 0 or not math.isfinite(norm):
        raise NumericalError("Cannot normalize a zero or non-finite quaternion")
    quaternion = quaternion / norm
    return -quaternion if quaternion[0] < 0 else quaternion


def predict_scale(z: MetricToken, head: ScaleHead) -> float:
    """s_hat = exp(g(z))."""

    if z.z.shape != head.weights.shape:
        raise ShapeMismatchError(f"Token width {z.z.size} does not match head width {head.weights.size}")
    logit = head(z.z)
    if abs(logit) > EXP_LIMIT:
        raise NumericalError(f"Scale logit g(z)={logit:.6g} is outside +/-{EXP_LIMIT:g}; exp would overflow")
    return math.exp(logit)


def apply_scale(pose: PoseEstimate, depth: DepthMap, s_hat: float) -> tuple[PoseEstimate, DepthMap]:
    """Scale translation and depth by ``s_hat``; rotation, focal and confidence are untouched."""

    if not s_hat > 0:
        raise DomainError(f"s_hat must be positive, got {s_hat}")
    scaled_pose = PoseEstimate(s_hat * pose.translation_raw, pose.rotation, pose.focal)
    return scaled_pose, DepthMap(s_hat * depth.depth_raw, depth.confidence)


def _eigen_mean(quaternions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    accumulator = np.einsum("n,ni,nj->ij", weights, quaternions, quaternions)
    values, vectors = np.linalg.eigh(accumulator)
    return vectors[:, int(np.argmax(values))]


def fuse_relative_pose(
    window_tokens: Sequence[PoseEstimate],
    weights: Sequence[float],
    method: Literal["mean", "eigen"] = "mean",
) -> PoseEstimate:
    """Weighted consensus of per-token pose estimates.

    ``mean`` aligns every quaternion to the hemisphere of the weighted
    eigen-mean, so the result does not depend on input order, and normalizes
    the weighted sum; ``eigen`` takes the dominant eigenvector of
    sum_n w_n q_n q_n^T and needs no alignment.
    """

    if not window_tokens:
        raise PreconditionError("Need at least one pose to fuse")
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size != len(window_tokens):
        raise ShapeMismatchError(f"{weights.size} weights for {len(window_tokens)} poses")
    if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > UNIT_TOLERANCE:
        raise PreconditionError(f"Fusion weights must be nonnegative and sum to 1, got {weights.sum()!r}")

    translations = np.stack([pose.translation_raw for pose in window_tokens])
    quaternions = np.stack([pose.rotation for pose in window_tokens])
    focal = float(weights @ np.array([pose.focal for pose in window_tokens]))

    if method == "mean":
        signs = np.where(quaternions @ _eigen_mean(quaternions, weights) < 0, -1.0, 1.0)
        fused = weights @ (quaternions * signs[:, None])
        if np.linalg.norm(fused) < 1e-12:
            raise NumericalError("Quaternion mean vanished; the inputs cancel each other")
    elif method == "eigen":
        fused = _eigen_mean(quaternions, weights)
    else:
        raise PreconditionError(f"Unsupported fusion method: {method}")
    return PoseEstimate.create(weights @ translations, fused, focal)


def smooth_l1(residual: np.ndarray | float, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    """0.5 r^2 / beta below beta, |r| - 0.5 beta above."""

    magnitude = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(magnitude < beta, 0.5 * magnitude**2 / beta, magnitude - 0.5 * beta)


def geodesic_distance(q_pred: np.ndarray, q_true: np.ndarray) -> float:
    """Rotation angle 2 arccos |<q_pred, q_true>|, evaluated in half-angle form."""

    if q_pred @ q_true < 0:
        q_true = -q_true
    half = math.atan2(float(np.linalg.norm(q_pred - q_true)), float(np.linalg.norm(q_pred + q_true)))
    return 4.0 * half


def _depth_normalizer(depth: DepthMap) -> float:
    positive = depth.depth_raw[depth.depth_raw > 0]
    if positive.size == 0:
        LOGGER.debug("Target depth has no positive entries; skipping normalization")
        return 1.0
    return float(np.median(positive))


def composite_loss(pred: FramePrediction, target: FrameTarget, w: LossWeights) -> LossBreakdown:
    """lambda_pose * L_pose + lambda_depth * L_depth + lambda_scale * L_scale.

    Translation and depth are divided by the median positive target depth. The
    scale term is only active for metric targets.
    """

    if pred.depth.depth_raw.shape != target.depth.depth_raw.shape:
        raise ShapeMismatchError(
            f"Depth maps differ: {pred.depth.depth_raw.shape} vs {target.depth.depth_raw.shape}"
        )
    normalizer = _depth_normalizer(target.depth)
    translation_error = (pred.pose.translation_raw - target.pose.translation_raw) / normalizer
    pose_term = float(np.mean(smooth_l1(translation_error))) + geodesic_distance(
        pred.pose.rotation, target.pose.rotation
    )
    depth_error = (pred.depth.depth_raw - target.depth.depth_raw) / normalizer
    depth_term = float(np.mean(pred.depth.confidence * smooth_l1(depth_error)))
    scale_term = 0.0
    if target.is_metric:
        if not (pred.scale > 0 and target.scale > 0):
            raise DomainError("Scales must be positive for the metric scale loss")
        scale_term = float(smooth_l1(math.log(pred.scale) - math.log(target.scale)))
    total = w.lambda_pose * pose_term + w.lambda_depth * depth_term + w.lambda_scale * scale_term
    return LossBreakdown(pose=pose_term, depth=depth_term, scale=scale_term, total=total)


def slow_channel_token(state: RecurrentState, gamma_bar: np.ndarray, threshold: float) -> MetricToken:
    """Metric token read from the state's slow channels.

    Per head, the rows of S whose mean gate is at least ``threshold`` are averaged
    into one ``value_dim`` vector; heads are concatenated. Heads without slow
    channels contribute zeros.
    """

    gamma_bar = np.asarray(gamma_bar, dtype=np.float64).reshape(-1)
    heads, key_dim, value_dim = state.S.shape
    if gamma_bar.size != heads * key_dim:
        raise ShapeMismatchError(f"{gamma_bar.size} mean gates for {heads * key_dim} key channels")
    _, slow = partition_channels(gamma_bar, threshold)
    slow_mask = np.zeros(heads * key_dim, dtype=bool)
    slow_mask[sorted(slow)] = True
    slow_mask = slow_mask.reshape(heads, key_dim)
    parts = []
    for head in range(heads):
        rows = state.S[head][slow_mask[head]]
        parts.append(rows.mean(axis=0) if rows.size else np.zeros(value_dim))
    return MetricToken(np.concatenate(parts))


__all__ = [
    "MetricToken",
    "ScaleHead",
    "PoseEstimate",
    "DepthMap",
    "LossWeights",
    "FramePrediction",
    "FrameTarget",
    "canonical_quaternion",
    "predict_scale",
    "apply_scale",
    "fuse_relative_pose",
    "smooth_l1",
    "geodesic_distance",
    "composite_loss",
    "slow_channel_token",
]
