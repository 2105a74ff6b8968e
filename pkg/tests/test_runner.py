"""Tests for the command line entry point and its exit codes."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from retention_stream.runner import EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION_FAILED, main, parse_args

SMALL = """
# unit-test sized run
stream_length = 60
d_model = 8
key_dim = 6
value_dim = 4
verify_bound_steps = 2000
verify_trials = 20
verify_gradient_instances = 4
verify_dilution_tmax = 200
"""


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("RETENTION_STREAM_CONFIG", raising=False)


class TestParseArgs:
    def test_common_flags(self) -> None:
        options = parse_args(["run", "--length", "50", "--chunk", "30", "--window", "5", "--precision", "f32"])
        assert options.command == "run"
        assert (options.stream_length, options.chunk_size, options.window) == (50, 30, 5)
        assert options.precision == "f32"
        assert not hasattr(options, "debug_gamma_override")

    def test_gamma_override_only_on_verify(self) -> None:
        assert parse_args(["verify", "--debug-gamma-override", "1.05"]).debug_gamma_override == 1.05
        with pytest.raises(SystemExit):
            parse_args(["run", "--debug-gamma-override", "1.05"])


class TestMain:
    def test_run(self, tmp_path: Path, config_file: Path) -> None:
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_file), "--out", str(out), "--length", "50"]) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["steps"] == 50

    def test_unknown_flag_is_usage_error(self) -> None:
        assert main(["run", "--no-such-flag"]) == EXIT_USAGE

    def test_missing_command_is_usage_error(self) -> None:
        assert main([]) == EXIT_USAGE

    def test_help_exits_cleanly(self) -> None:
        assert main(["--help"]) == EXIT_OK

    def test_chunk_below_window_is_rejected(self, tmp_path: Path) -> None:
        assert main(["run", "--chunk", "5", "--window", "10", "--out", str(tmp_path)]) == EXIT_USAGE
        assert not (tmp_path / "records.csv").exists()

    def test_missing_config_file(self, tmp_path: Path) -> None:
        assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE

    def test_unwritable_output_is_usage_error(self, tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        assert main(["run", "--length", "30", "--out", str(blocker / "sub")]) == EXIT_USAGE
        assert any("cannot write" in record.message and "blocker" in record.message for record in caplog.records)

    def test_probe_before_run(self, tmp_path: Path, config_file: Path) -> None:
        assert main(["probe", "--config", str(config_file), "--out", str(tmp_path / "empty")]) == EXIT_USAGE

    def test_kernels_single_shape(self, tmp_path: Path, config_file: Path) -> None:
        out = tmp_path / "kernels"
        args = ["kernels", "--config", str(config_file), "--out", str(out), "--shape", "refresh"]
        assert main(args) == EXIT_OK
        assert set(json.loads((out / "kernels_summary.json").read_text())) == {"refresh"}

    @pytest.mark.slow
    def test_verify_passes(self, tmp_path: Path, config_file: Path) -> None:
        out = tmp_path / "verify"
        assert main(["verify", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
        assert json.loads((out / "manifest.json").read_text())["all_pass"] is True

    @pytest.mark.slow
    def test_verify_with_broken_gate_fails(self, tmp_path: Path, config_file: Path) -> None:
        out = tmp_path / "broken"
        args = ["verify", "--config", str(config_file), "--out", str(out), "--debug-gamma-override", "1.05"]
        assert main(args) == EXIT_VERIFICATION_FAILED
        assert json.loads((out / "manifest.json").read_text())["all_pass"] is False
