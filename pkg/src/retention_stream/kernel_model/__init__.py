"""Evidence influence kernels and the shape factory."""
from __future__ import annotations

import logging
from typing import Any

from ..errors import PreconditionError
from .base import KernelProfile, KernelShape
from .functions import (
    build_profile,
    compose_kernel,
    effective_horizon,
    eval_channel_kernel,
    eval_time_kernel,
    gamma_for_horizon,
    ones_profile,
    partition_channels,
)
from .shapes import BlockRefresh, Box, ExponentialChannelwise, HeavyTail, SpikeSink

LOGGER = logging.getLogger(__name__)

_SHAPES: dict[str, type[KernelShape]] = {
    "box": Box,
    "refresh": BlockRefresh,
    "heavy_tail": HeavyTail,
    "sink": SpikeSink,
    "exponential": ExponentialChannelwise,
}


def create_shape(name: str, **params: Any) -> KernelShape:
    """Instantiate a kernel shape from its CLI name."""

    try:
        shape_cls = _SHAPES[name]
    except KeyError:
        raise PreconditionError(f"Unsupported kernel shape: {name}") from None
    LOGGER.debug("Selected %s for shape %s", shape_cls.__name__, name)
    return shape_cls(**params)


__all__ = [
    "create_shape",
    "KernelShape",
    "KernelProfile",
    "Box",
    "BlockRefresh",
    "HeavyTail",
    "SpikeSink",
    "ExponentialChannelwise",
    "build_profile",
    "compose_kernel",
    "effective_horizon",
    "eval_channel_kernel",
    "eval_time_kernel",
    "gamma_for_horizon",
    "ones_profile",
    "partition_channels",
]
