"""Tests for planted streams, scenario runs, kernel comparisons and snapshot probes."""
from __future__ import annotations

import json

import numpy as np
import pytest

from retention_stream.config import ScenarioConfig
from retention_stream.errors import PreconditionError
from retention_stream.kernel_model import Box
from retention_stream.linear_attention import RecurrentState
from retention_stream.local_attention import DilutionConfig, dilution_bound, mass_for_scores
from retention_stream.models import StreamRecord
from retention_stream.reporting import RECORD_HEADER
from retention_stream.scenarios import (
    compare_kernels,
    discontinuities,
    drift_proxy,
    generate_stream,
    probe_lags,
    probe_snapshots,
    run_scenario,
    time_fit,
)


class TestPlantedStream:
    def test_same_seed_same_stream(self, scenario_config: ScenarioConfig) -> None:
        first, second = generate_stream(scenario_config), generate_stream(scenario_config)
        assert first.tokens.x.tobytes() == second.tokens.x.tobytes()
        assert first.planted_values.tobytes() == second.planted_values.tobytes()
        other = generate_stream(scenario_config.replace(seed=1))
        assert not np.array_equal(first.tokens.x, other.tokens.x)

    def test_clipped_scores_realise_best_case(self, scenario_config: ScenarioConfig) -> None:
        stream = generate_stream(scenario_config)
        cfg = DilutionConfig(scenario_config.w_geo, scenario_config.score_bound)
        for t in (5, 17, 60, 120):
            scores = stream.clipped_scores(t)
            relevant = list(stream.relevant_set(t))
            np.testing.assert_allclose(scores[relevant], 1.0, atol=1e-9)
            np.testing.assert_allclose(np.delete(scores, relevant), -1.0, atol=1e-9)
            assert mass_for_scores(scores, relevant) == pytest.approx(dilution_bound(t, cfg), abs=1e-9)

    def test_budget_covering_the_stream(self, scenario_config: ScenarioConfig) -> None:
        cfg = scenario_config.replace(w_geo=scenario_config.stream_length, verify_dilution_tmax=500)
        stream = generate_stream(cfg)
        t = cfg.stream_length
        assert list(stream.relevant_set(t)) == list(range(t))
        np.testing.assert_allclose(stream.clipped_scores(t), 1.0, atol=1e-9)

    def test_planted_pairs(self, scenario_config: ScenarioConfig) -> None:
        stream = generate_stream(scenario_config)
        keys = stream.planted_keys[: scenario_config.key_dim]
        np.testing.assert_allclose(keys @ keys.T, np.eye(scenario_config.key_dim), atol=1e-12)
        assert np.array_equal(stream.planted_keys[scenario_config.key_dim], stream.planted_keys[0])
        np.testing.assert_allclose(np.linalg.norm(stream.planted_values, axis=1), 1.0)

    def test_tokens_carry_the_planted_pairs(self, scenario_config: ScenarioConfig) -> None:
        stream = generate_stream(scenario_config.replace(stream_length=1000))
        unscaled = stream.tokens.x / np.exp(stream.log_scale)[:, None]
        pairs = np.hstack((stream.planted_keys, stream.planted_values))

        def explained(design: np.ndarray) -> float:
            design = np.hstack((design, np.ones((len(design), 1))))
            coef, *_ = np.linalg.lstsq(design, unscaled, rcond=None)
            residual = unscaled - design @ coef
            return 1.0 - float(np.sum(residual**2) / np.sum((unscaled - unscaled.mean(axis=0)) ** 2))

        shuffled = pairs[np.random.default_rng(0).permutation(len(pairs))]
        assert explained(pairs) > 0.2
        assert explained(pairs) > 5 * explained(shuffled)

    def test_probe_geometry_needs_two_key_dims(self, scenario_config: ScenarioConfig) -> None:
        with pytest.raises(PreconditionError):
            generate_stream(scenario_config.replace(key_dim=1))


class TestRunScenario:
    def test_outputs(self, scenario_config: ScenarioConfig) -> None:
        result = run_scenario(scenario_config)
        out = scenario_config.out_path
        assert len(result.records) == 120
        lines = (out / "records.csv").read_text().splitlines()
        assert lines[0] == ",".join(RECORD_HEADER)
        assert len(lines) == 121
        for name in ("timings.csv", "spectrum.csv", "probe_targets.csv", "summary.json"):
            assert (out / name).is_file(), name
        assert len(list((out / "snapshots").glob("chunk_*.glas"))) == 6

    def test_constant_memory_and_bound(self, scenario_config: ScenarioConfig) -> None:
        summary = run_scenario(scenario_config).summary
        assert summary["constant_memory"] is True
        assert summary["max_state_bytes"] == 2 * 6 * 4 * 8
        assert summary["min_bound_margin"] >= 0.0
        assert summary["time_fit"] is not None
        saved = json.loads((scenario_config.out_path / "summary.json").read_text())
        assert saved["steps"] == 120
        assert saved["config"]["chunk_size"] == 21

    def test_records_are_byte_reproducible(self, scenario_config: ScenarioConfig, tmp_path) -> None:
        run_scenario(scenario_config)
        again = scenario_config.replace(out_dir=str(tmp_path / "again"))
        run_scenario(again)
        for name in ("records.csv", "spectrum.csv", "probe_targets.csv"):
            assert (scenario_config.out_path / name).read_bytes() == (again.out_path / name).read_bytes()
        first = sorted((scenario_config.out_path / "snapshots").iterdir())
        second = sorted((again.out_path / "snapshots").iterdir())
        assert [path.read_bytes() for path in first] == [path.read_bytes() for path in second]

    def test_snapshot_holds_final_state(self, scenario_config: ScenarioConfig) -> None:
        result = run_scenario(scenario_config.replace(stream_length=42))
        data = (scenario_config.out_path / "snapshots" / "chunk_00001.glas").read_bytes()
        state = RecurrentState.from_bytes(data, heads=2)
        assert state.frobenius() == pytest.approx(result.records[-1].state_fro, rel=1e-12)

    def test_single_step(self, scenario_config: ScenarioConfig) -> None:
        result = run_scenario(scenario_config.replace(stream_length=1))
        assert len(result.records) == 1
        assert result.summary["time_fit"] is None
        assert json.loads((scenario_config.out_path / "summary.json").read_text())["time_fit"] is None

    def test_dilution_measurement(self, scenario_config: ScenarioConfig) -> None:
        result = run_scenario(scenario_config.replace(measure_dilution=True, stream_length=60))
        cfg = DilutionConfig(scenario_config.w_geo, scenario_config.score_bound)
        for record in result.records:
            assert record.relevant_mass is not None
            if record.t > cfg.w_geo:
                assert record.relevant_mass <= dilution_bound(record.t, cfg) + 1e-12

    def test_float32_mode(self, scenario_config: ScenarioConfig) -> None:
        result = run_scenario(scenario_config.replace(precision="f32", stream_length=40))
        assert result.summary["max_state_bytes"] == 2 * 6 * 4 * 4

    def test_inline_timing(self, scenario_config: ScenarioConfig) -> None:
        run_scenario(scenario_config.replace(inline_timing=True, stream_length=5))
        rows = (scenario_config.out_path / "records.csv").read_text().splitlines()[1:]
        assert all(row.split(",")[5] != "" for row in rows)

    @pytest.mark.slow
    def test_ten_thousand_steps_scale_linearly(self, tmp_path) -> None:
        cfg = ScenarioConfig(out_dir=str(tmp_path / "long"), snapshot_every_chunk=False)
        summary = run_scenario(cfg).summary
        assert summary["constant_memory"] is True
        assert summary["time_fit"]["r_squared"] >= 0.98


class TestKernelComparison:
    @pytest.fixture
    def kernel_config(self, scenario_config: ScenarioConfig) -> ScenarioConfig:
        return scenario_config.replace(key_dim=24, chunk_size=12, window=6, stream_length=96)

    def test_exports(self, kernel_config: ScenarioConfig) -> None:
        result = compare_kernels(kernel_config)
        lines = (kernel_config.out_path / "kernels.csv").read_text().splitlines()
        assert lines[0] == "shape,t,drift_proxy,state_fro,state_bytes"
        assert len(lines) == 1 + 5 * 96
        summary = json.loads((kernel_config.out_path / "kernels_summary.json").read_text())
        assert set(summary) == {"exponential", "heavy_tail", "refresh", "box", "sink"}
        assert summary == json.loads(json.dumps(result.summary))

    def test_heavy_tail_grows(self, kernel_config: ScenarioConfig) -> None:
        result = compare_kernels(kernel_config, ["heavy_tail", "exponential"])
        assert result.summary["heavy_tail"]["norm_slope"] > 0
        assert 0.0 <= result.summary["exponential"]["max_drift"] <= 1.0

    def test_refresh_jumps_at_every_period(self, kernel_config: ScenarioConfig) -> None:
        result = compare_kernels(kernel_config, ["refresh"])
        drifts = [row[2] for row in result.rows]
        jumps = discontinuities(drifts)
        assert all(step in jumps for step in range(12, 96, 12))
        assert result.summary["refresh"]["discontinuities"] == len(jumps)

    def test_shape_objects_set_the_memory(self, kernel_config: ScenarioConfig) -> None:
        result = compare_kernels(kernel_config, [Box(window=3)])
        box = result.summary["box"]
        assert box["parameters"] == {"window": 3}
        assert box["state_bytes"] == 3 * (24 + 4) * 8
        profile = (kernel_config.out_path / "kernel_profiles" / "box.csv").read_text().splitlines()
        assert profile[0] == "t,i,weight"

    def test_named_shapes_follow_the_config(self, kernel_config: ScenarioConfig) -> None:
        result = compare_kernels(kernel_config, ["refresh", "exponential"])
        assert result.summary["refresh"]["parameters"] == {"period": 12}
        gammas = result.summary["exponential"]["parameters"]["gammas"]
        assert len(gammas) == 24
        assert all(0.0 < value < 1.0 for value in gammas)

    def test_each_shape_once(self, kernel_config: ScenarioConfig) -> None:
        with pytest.raises(PreconditionError):
            compare_kernels(kernel_config, ["box", Box(window=3)])

    def test_needs_a_shape(self, kernel_config: ScenarioConfig) -> None:
        with pytest.raises(PreconditionError):
            compare_kernels(kernel_config, [])


class TestDriftHelpers:
    def test_probe_lags(self) -> None:
        assert probe_lags(10) == (1, 5, 10)
        assert probe_lags(1) == (1,)

    def test_drift_proxy(self) -> None:
        value = np.array([0.6, 0.8])
        assert drift_proxy(3.0 * value, value) == pytest.approx(0.0, abs=1e-15)
        assert drift_proxy(np.zeros(2), value) == 1.0
        assert drift_proxy(np.array([0.8, -0.6]), value) == pytest.approx(1.0)

    def test_discontinuities(self) -> None:
        series = [0.0, 0.1, 0.2, 0.3, 2.0, 2.1, 2.2]
        assert discontinuities(series) == [4]
        assert discontinuities([1.0]) == []

    def test_time_fit(self) -> None:
        records = [StreamRecord(t, 0.0, 0.0, 0.0, None, 100, 8) for t in range(1, 21)]
        fit = time_fit(records, warmup=5)
        assert fit["slope_ns_per_step"] == pytest.approx(100.0)
        assert fit["r_squared"] == pytest.approx(1.0)
        assert time_fit(records[:4], warmup=2) is None


class TestProbe:
    def test_probe_reads_a_finished_run(self, scenario_config: ScenarioConfig) -> None:
        cfg = scenario_config.replace(stream_length=300)
        run_scenario(cfg)
        result = probe_snapshots(cfg)
        assert result.train_size + result.test_size == 15
        assert result.weights.shape == (12,)
        assert sum(result.band_attribution.values()) == pytest.approx(1.0)
        saved = json.loads((cfg.out_path / "probe.json").read_text())
        assert saved["samples"] == 15

    def test_snapshots_recover_the_log_scale(self, scenario_config: ScenarioConfig) -> None:
        cfg = scenario_config.replace(stream_length=1000, chunk_size=10)
        run_scenario(cfg)
        result = probe_snapshots(cfg)
        assert result.train_size + result.test_size == 100
        assert result.r_squared > 0.3

    def test_probe_without_run(self, scenario_config: ScenarioConfig) -> None:
        with pytest.raises(PreconditionError):
            probe_snapshots(scenario_config)
