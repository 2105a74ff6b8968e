"""Memory strategy factory keyed by influence-kernel shape."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ..config import ScenarioConfig
from ..errors import PreconditionError
from ..kernel_model import (
    BlockRefresh,
    Box,
    ExponentialChannelwise,
    HeavyTail,
    KernelShape,
    SpikeSink,
    create_shape,
)
from ..linear_attention import GATE_EPS
from .attention import SinkMemory, WindowMemory
from .base import StreamMemory
from .linear import GatedMemory, RefreshMemory, UngatedMemory

LOGGER = logging.getLogger(__name__)


def shape_for_config(name: str, cfg: ScenarioConfig, gammas: Optional[Sequence[float]] = None) -> KernelShape:
    """Build the kernel shape ``name`` with the parameters ``cfg`` runs it at.

    ``gammas`` feeds the exponential shape; without it every channel sits at
    the configured gate bias, clipped like the live gates.
    """

    if name == "exponential":
        if gammas is None:
            gammas = np.full(cfg.key_dim, float(np.clip(expit(cfg.gate_bias), GATE_EPS, 1.0 - GATE_EPS)))
        return create_shape(name, gammas=gammas)
    if name == "box":
        return create_shape(name, window=cfg.window)
    if name == "refresh":
        return create_shape(name, period=cfg.chunk_size)
    if name == "sink":
        return create_shape(name, sink_position=cfg.sink_tokens)
    return create_shape(name)


def memory_for_shape(shape: KernelShape, key_dim: int, value_dim: int, window: int) -> StreamMemory:
    """Instantiate the streaming memory whose influence kernel is ``shape``.

    ``window`` is the recent-token budget of the sink cache; the box window and
    refresh period come from the shape itself.
    """

    if isinstance(shape, ExponentialChannelwise):
        memory: StreamMemory = GatedMemory(key_dim, value_dim)
    elif isinstance(shape, HeavyTail):
        memory = UngatedMemory(key_dim, value_dim)
    elif isinstance(shape, BlockRefresh):
        memory = RefreshMemory(key_dim, value_dim, period=shape.period)
    elif isinstance(shape, Box):
        memory = WindowMemory(key_dim, value_dim, window=shape.window)
    elif isinstance(shape, SpikeSink):
        memory = SinkMemory(key_dim, value_dim, window=window, sink_tokens=shape.sink_position)
    else:
        raise PreconditionError(f"No streaming memory realises kernel shape {type(shape).__name__}")
    LOGGER.debug("Selected %s for shape %s", type(memory).__name__, shape.name)
    return memory


def create_memory(name: str, cfg: ScenarioConfig) -> StreamMemory:
    """Instantiate the memory that realises kernel shape ``name`` for one head of ``cfg``."""

    return memory_for_shape(shape_for_config(name, cfg), cfg.key_dim, cfg.value_dim, cfg.window)


__all__ = [
    "create_memory",
    "memory_for_shape",
    "shape_for_config",
    "StreamMemory",
    "GatedMemory",
    "UngatedMemory",
    "RefreshMemory",
    "WindowMemory",
    "SinkMemory",
]
