"""Batch runner for every executable bound check, with file export."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import analysis
from .config import ScenarioConfig
from .local_attention import DilutionConfig, DilutionReport
from .logging_utils import log_duration
from .models import BoundReport, RetentionSpectrum
from .reporting import render_report, write_json, write_spectrum
from .scenarios import build_params, generate_stream

LOGGER = logging.getLogger(__name__)

INITIAL_DECAY_GATES = (0.5, 0.9, 0.99)
HORIZON_GRID = (0.3, 0.5, 0.9, 0.99)
CONTAMINATION_STEPS = 1000
INITIAL_DECAY_STEPS = 5000
UNGATED_BOUND_STEPS = 10000
INITIAL_STATE_SCALE = 10.0
CHUNKING_TOKENS = 64


@dataclass(frozen=True)
class SuiteResult:
    reports: tuple[BoundReport, ...]
    dilution: DilutionReport
    spectrum: RetentionSpectrum
    out_dir: Path

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.reports)

    @property
    def failures(self) -> list[str]:
        return [report.name for report in self.reports if not report.passed]


def _checks(cfg: ScenarioConfig, gamma_override: Optional[float]) -> list[tuple[str, Callable[[], BoundReport]]]:
    seed = cfg.seed
    checks: list[tuple[str, Callable[[], BoundReport]]] = [
        ("recursion", lambda: analysis.verify_recursion(cfg.verify_trials, seed)),
        ("contamination", lambda: analysis.verify_contamination(CONTAMINATION_STEPS, seed=seed)),
        (
            "contamination_discounted",
            lambda: analysis.verify_contamination(CONTAMINATION_STEPS, seed=seed, gamma=0.9),
        ),
    ]
    for gamma_bar in INITIAL_DECAY_GATES:
        checks.append(
            (
                f"initial_decay_{gamma_bar}",
                lambda gamma_bar=gamma_bar: analysis.verify_initial_decay(
                    INITIAL_DECAY_STEPS, gamma_bar=gamma_bar, seed=seed
                ),
            )
        )
    checks += [
        (
            "state_bound",
            lambda: analysis.verify_state_bound(
                cfg.verify_bound_steps, seed=seed, gamma_override=gamma_override
            ),
        ),
        (
            "state_bound_initial",
            lambda: analysis.verify_state_bound(
                min(cfg.verify_bound_steps, UNGATED_BOUND_STEPS), seed=seed, initial_scale=INITIAL_STATE_SCALE
            ),
        ),
        (
            "state_bound_ungated",
            lambda: analysis.verify_state_bound(
                min(cfg.verify_bound_steps, UNGATED_BOUND_STEPS), gamma_bar=1.0, seed=seed
            ),
        ),
        ("horizon", lambda: analysis.verify_horizon(HORIZON_GRID)),
        ("ttt_equivalence", lambda: analysis.verify_ttt_equivalence(cfg.verify_trials, seed=seed)),
        ("gradients", lambda: analysis.verify_gradients(cfg.verify_gradient_instances, seed=seed)),
        ("chunking", lambda: _chunking(cfg)),
        ("rope", lambda: analysis.verify_rope(seed=seed)),
    ]
    return checks


def _chunking(cfg: ScenarioConfig) -> BoundReport:
    params = build_params(cfg.replace(precision="f64"))
    tokens = generate_stream(cfg.replace(stream_length=CHUNKING_TOKENS)).tokens
    return analysis.verify_chunking(params, tokens)


def run_verification_suite(cfg: ScenarioConfig, gamma_override: Optional[float] = None) -> SuiteResult:
    """Run every check, then write per-report JSON, ``dilution.csv``, ``spectrum.csv``,
    ``manifest.json`` and ``REPORT.md`` into ``cfg.out_dir``.

    A failed bound never raises; it shows up as ``pass: false`` in the manifest.
    """

    out_dir = cfg.out_path
    reports_dir = out_dir / "reports"
    try:
        reports_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"Cannot create output directory {reports_dir}: {exc}") from exc
    if gamma_override is not None:
        LOGGER.warning("Forcing every gate to %s in the state bound check", gamma_override)

    reports: list[BoundReport] = []
    for label, check in _checks(cfg, gamma_override):
        with log_duration(LOGGER, label):
            reports.append(check())

    with log_duration(LOGGER, "dilution"):
        dilution_report, dilution = analysis.verify_dilution_report(
            DilutionConfig(cfg.w_geo, cfg.score_bound),
            trials=cfg.verify_trials,
            t_max=cfg.verify_dilution_tmax,
            seed=cfg.seed,
        )
    reports.append(dilution_report)
    dilution.write_csv(out_dir / "dilution.csv")

    params = build_params(cfg.replace(precision="f64"))
    spectrum = analysis.extract_retention_spectrum(params, generate_stream(cfg).tokens)
    write_spectrum(out_dir / "spectrum.csv", spectrum)

    entries = []
    for report in reports:
        path = reports_dir / f"{report.name}.json"
        write_json(path, report.to_dict())
        entries.append(
            {
                "name": report.name,
                "pass": report.passed,
                "max_violation": report.max_violation,
                "file": str(path.relative_to(out_dir)),
            }
        )
    result = SuiteResult(reports=tuple(reports), dilution=dilution, spectrum=spectrum, out_dir=out_dir)
    write_json(out_dir / "manifest.json", {"reports": entries, "all_pass": result.passed})

    counts, edges = spectrum.histogram()
    render_report(
        out_dir / "REPORT.md",
        reports=reports,
        all_pass=result.passed,
        dilution=dilution,
        histogram=list(zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist())),
        config=cfg.as_dict(),
        gamma_override=gamma_override,
    )
    if result.passed:
        LOGGER.info("All %d checks passed", len(reports))
    else:
        LOGGER.warning("%d of %d checks failed: %s", len(result.failures), len(reports), ", ".join(result.failures))
    return result


__all__ = ["SuiteResult", "run_verification_suite"]
