"""Shared fixtures: seeded generators, small layers and throwaway scenario configs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from retention_stream.config import ScenarioConfig
from retention_stream.linear_attention import GLAParams, TokenSequence


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_params() -> GLAParams:
    """Two-head layer with gates well inside (0, 1)."""
    return GLAParams.initialize(6, 3, 2, heads=2, seed=7, gate_bias=0.5, init_scale=0.4)


@pytest.fixture
def small_tokens(rng: np.random.Generator) -> TokenSequence:
    return TokenSequence(rng.standard_normal((12, 6)))


@pytest.fixture
def scenario_config(tmp_path: Path) -> ScenarioConfig:
    """A scenario small enough for unit tests, writing under ``tmp_path``."""
    return ScenarioConfig(
        stream_length=120,
        chunk_size=21,
        window=10,
        d_model=8,
        key_dim=6,
        value_dim=4,
        heads=2,
        out_dir=str(tmp_path / "run"),
        warmup_steps=10,
        verify_bound_steps=2000,
        verify_trials=20,
        verify_gradient_instances=4,
        verify_dilution_tmax=200,
    )
