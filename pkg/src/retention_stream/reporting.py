"""CSV, JSON and Markdown export for runs and verification suites."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, select_autoescape

from .models import RetentionSpectrum, StreamRecord, to_jsonable

LOGGER = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"
RECORD_HEADER = ("t", "out_norm", "state_fro", "bound_margin", "relevant_mass", "step_ns", "state_bytes")


def _float(value: Optional[float]) -> str:
    return "" if value is None else format(float(value), ".17g")


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    LOGGER.debug("Wrote %s", path)
    return path


def write_records(path: Path, records: Sequence[StreamRecord], include_timing: bool = False) -> Path:
    """``records.csv``; ``step_ns`` stays empty unless ``include_timing`` so reruns are byte-identical."""

    return write_rows(
        path,
        RECORD_HEADER,
        (
            (
                record.t,
                _float(record.out_norm),
                _float(record.state_fro),
                _float(record.bound_margin),
                _float(record.relevant_mass),
                record.step_ns if include_timing else "",
                record.state_bytes,
            )
            for record in records
        ),
    )


def write_timings(path: Path, records: Sequence[StreamRecord]) -> Path:
    return write_rows(path, ("t", "step_ns"), ((record.t, record.step_ns) for record in records))


def write_spectrum(path: Path, spectrum: RetentionSpectrum) -> Path:
    return write_rows(
        path,
        ("layer", "channel", "gamma_bar", "tau"),
        ((layer, channel, _float(gamma), _float(tau)) for layer, channel, gamma, tau in spectrum.rows()),
    )


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    serializable = {key: to_jsonable(value) for key, value in payload.items()}
    path.write_text(json.dumps(serializable, indent=2, sort_keys=True) + "\n")
    LOGGER.debug("Wrote %s", path)
    return path


def render_report(path: Path, template: str = "report.md.j2", **context: Any) -> Path:
    """Render a Markdown report from the packaged templates."""

    env = Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        autoescape=select_autoescape(enabled_extensions=("html",), default=False),
        keep_trailing_newline=True,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(env.get_template(template).render(**context))
    return path


__all__ = [
    "RECORD_HEADER",
    "write_rows",
    "write_records",
    "write_timings",
    "write_spectrum",
    "write_json",
    "render_report",
]
