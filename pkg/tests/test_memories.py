"""Tests for the memory strategies behind each influence kernel shape."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit

from retention_stream.config import ScenarioConfig
from retention_stream.errors import PreconditionError
from retention_stream.kernel_model import BlockRefresh, Box, ExponentialChannelwise, HeavyTail, KernelShape, SpikeSink
from retention_stream.memories import (
    GatedMemory,
    RefreshMemory,
    SinkMemory,
    UngatedMemory,
    WindowMemory,
    create_memory,
    memory_for_shape,
    shape_for_config,
)

KEYS = np.eye(4)
VALUES = np.arange(1.0, 13.0).reshape(4, 3)


def _fill(memory, steps: int, gamma: float = 0.5) -> None:
    for step in range(steps):
        memory.step(KEYS[step % 4], VALUES[step % 4], np.full(4, gamma))


class TestLinearMemories:
    def test_gated_memory_decays_old_writes(self) -> None:
        memory = GatedMemory(4, 3)
        _fill(memory, 2)
        np.testing.assert_allclose(memory.read(KEYS[0]), 0.5 * VALUES[0])
        np.testing.assert_allclose(memory.read(KEYS[1]), VALUES[1])
        assert memory.steps == 2

    def test_ungated_memory_ignores_gate(self) -> None:
        memory = UngatedMemory(4, 3)
        _fill(memory, 8, gamma=0.1)
        np.testing.assert_allclose(memory.read(KEYS[0]), 2.0 * VALUES[0])
        assert memory.state_fro == pytest.approx(2.0 * np.linalg.norm(VALUES))

    def test_refresh_memory_zeroes_each_period(self) -> None:
        memory = RefreshMemory(4, 3, period=3)
        _fill(memory, 4)
        assert np.array_equal(memory.state_matrix(), np.outer(KEYS[3], VALUES[3]))

    def test_refresh_period_must_be_positive(self) -> None:
        with pytest.raises(PreconditionError):
            RefreshMemory(4, 3, period=0)

    def test_state_bytes_are_constant(self) -> None:
        memory = GatedMemory(4, 3)
        sizes = set()
        for _ in range(50):
            _fill(memory, 1)
            sizes.add(memory.state_bytes)
        assert sizes == {4 * 3 * 8}


class TestCacheMemories:
    def test_window_evicts_oldest(self) -> None:
        memory = WindowMemory(4, 3, window=2)
        _fill(memory, 3)
        assert np.array_equal(memory.read(KEYS[2]), VALUES[2])
        assert np.array_equal(memory.read(KEYS[1]), VALUES[1])
        assert np.array_equal(memory.read(KEYS[0]), np.zeros(3))

    def test_empty_window_reads_zero(self) -> None:
        assert np.array_equal(WindowMemory(4, 3, window=2).read(KEYS[0]), np.zeros(3))

    def test_window_state_matrix(self) -> None:
        memory = WindowMemory(4, 3, window=4)
        _fill(memory, 2)
        expected = np.outer(KEYS[0], VALUES[0]) + np.outer(KEYS[1], VALUES[1])
        assert np.array_equal(memory.state_matrix(), expected)

    def test_sink_keeps_first_tokens(self) -> None:
        memory = SinkMemory(4, 3, window=1, sink_tokens=1)
        _fill(memory, 3)
        keys, values = memory._held()
        assert np.array_equal(keys, KEYS[[0, 2]])
        assert np.array_equal(values, VALUES[[0, 2]])
        assert np.all(memory.read(KEYS[0]) > 0)

    def test_sink_bytes_include_sinks(self) -> None:
        memory = SinkMemory(4, 3, window=5, sink_tokens=2)
        assert memory.state_bytes == (5 + 2) * (4 + 3) * 8


def test_factory_follows_config() -> None:
    cfg = ScenarioConfig(key_dim=4, value_dim=3, chunk_size=12, window=6, sink_tokens=2)
    refresh = create_memory("refresh", cfg)
    assert isinstance(refresh, RefreshMemory)
    assert refresh.period == 12
    assert isinstance(create_memory("box", cfg), WindowMemory)
    assert create_memory("sink", cfg).sink_tokens == 2
    assert isinstance(create_memory("exponential", cfg), GatedMemory)
    assert isinstance(create_memory("heavy_tail", cfg), UngatedMemory)
    with pytest.raises(PreconditionError):
        create_memory("spiral", cfg)


def test_memory_takes_its_parameters_from_the_shape() -> None:
    assert memory_for_shape(Box(window=3), 4, 3, window=10).window == 3
    assert memory_for_shape(BlockRefresh(period=5), 4, 3, window=10).period == 5
    sink = memory_for_shape(SpikeSink(sink_position=2), 4, 3, window=6)
    assert (sink.sink_tokens, sink.window) == (2, 6)
    assert isinstance(memory_for_shape(HeavyTail(), 4, 3, window=10), UngatedMemory)
    assert isinstance(memory_for_shape(ExponentialChannelwise([0.9] * 4), 4, 3, window=10), GatedMemory)


def test_shape_for_config() -> None:
    cfg = ScenarioConfig(key_dim=4, value_dim=3, chunk_size=12, window=6, sink_tokens=2, gate_bias=4.0)
    assert shape_for_config("box", cfg) == Box(window=6)
    assert shape_for_config("refresh", cfg) == BlockRefresh(period=12)
    assert shape_for_config("sink", cfg).sink_position == 2
    exponential = shape_for_config("exponential", cfg)
    assert exponential.gammas == pytest.approx((expit(4.0),) * 4)
    assert shape_for_config("exponential", cfg, gammas=[0.5] * 4).gamma == 0.5


def test_shape_without_a_memory() -> None:
    class Triangle(KernelShape):
        name = "triangle"

        def table(self, horizon: int) -> np.ndarray:
            return np.tril(np.ones((horizon, horizon)))

    with pytest.raises(PreconditionError):
        memory_for_shape(Triangle(), 4, 3, window=10)
