from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence, Tuple

import pandas as pd

from logic.cusum import AlarmRecord, CusumConfig, CusumTrace
from logic.graph import InfluenceGraph
from logic.influence import BuildDiagnostics, Municipality
from logic.ranking import DivergenceSummary, InspectionReport
from logic.scenario import Scenario, World

_logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "stratum",
    "operator",
    "municipality_id",
    "municipality_name",
    "discrepancy",
    "rate_ma28",
    "rank_disc",
    "rank_rate",
    "flagged",
    "rank_disc-rank_rate",
]
TRACE_COLUMNS = ["municipality_id", "operator", "date", "d", "S", "alarm"]


def atomic_write_text(path: Path | str, text: str) -> Path:
    """Write ``text`` through a temporary sibling file and rename it into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    _logger.debug("wrote %s (%d bytes)", target, len(text))
    return target


def format_number(value: float, digits: int = 15) -> str:
    if math.isnan(value):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, f".{digits}g")


def json_number(value: float) -> float | str | None:
    """JSON has no inf/nan: MISSING becomes null and infinity the string ``"inf"``."""
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def write_json(path: Path | str, payload: Any) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=False, allow_nan=False, ensure_ascii=False)
    return atomic_write_text(path, text + "\n")


def _frame_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


# Graph ---------------------------------------------------------------
def edge_list_text(graph: InfluenceGraph) -> str:
    """``target_id,source_id,weight`` rows sorted by target then source; weights round-trip exactly."""
    frame = pd.DataFrame(
        [(target, source, format(weight, ".17g")) for target, source, weight in graph.edges()],
        columns=["target_id", "source_id", "weight"],
    )
    return _frame_csv(frame)


def write_edge_list(graph: InfluenceGraph, path: Path | str) -> Path:
    return atomic_write_text(path, edge_list_text(graph))


def write_diagnostics(diagnostics: BuildDiagnostics, path: Path | str) -> Path:
    return write_json(path, diagnostics.as_dict())


# Ranking -------------------------------------------------------------
def report_frame(report: InspectionReport, municipalities: Iterable[Municipality]) -> pd.DataFrame:
    names = {m.id: m.name for m in municipalities}
    rows = []
    for section in report.sections:
        for entry in section.entries:
            rows.append(
                (
                    section.stratum.name,
                    entry.operator,
                    entry.municipality,
                    names.get(entry.municipality, ""),
                    format_number(entry.discrepancy.value),
                    format_number(entry.rate_ma28),
                    entry.rank_by_discrepancy,
                    entry.rank_by_rate,
                    "true" if entry.flagged else "false",
                    entry.rank_pair,
                )
            )
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def report_payload(
    report: InspectionReport,
    municipalities: Iterable[Municipality],
    summary: DivergenceSummary | None = None,
) -> Dict[str, Any]:
    names = {m.id: m.name for m in municipalities}
    sections = []
    for section in report.sections:
        sections.append(
            {
                "stratum": section.stratum.name,
                "operator": section.operator,
                "entries": [
                    {
                        "municipality_id": e.municipality,
                        "municipality_name": names.get(e.municipality, ""),
                        "operator": e.operator,
                        "discrepancy": json_number(e.discrepancy.value),
                        "observed": json_number(e.discrepancy.observed),
                        "expected": json_number(e.discrepancy.expected),
                        "rate_ma28": json_number(e.rate_ma28),
                        "rank_disc": e.rank_by_discrepancy,
                        "rank_rate": e.rank_by_rate,
                        "flagged": e.flagged,
                        "rank_pair": e.rank_pair,
                    }
                    for e in section.entries
                ],
            }
        )
    payload: Dict[str, Any] = {
        "date": report.date.isoformat(),
        "k": report.k,
        "mode": report.mode.value,
        "operators": list(report.operators),
        "tie_break": report.tie_break,
        "strata": [
            {"name": s.name, "min_population": s.min_population, "max_population": s.max_population}
            for s in report.strata
        ],
        "sections": sections,
        "excluded": [
            {"stratum": x.stratum, "operator": x.operator, "municipality_id": x.municipality, "reason": x.reason}
            for x in report.excluded
        ],
    }
    if summary is not None:
        payload["divergence"] = {"per_section": dict(summary.per_section), "overall": summary.overall}
    return payload


def write_report(
    report: InspectionReport,
    municipalities: Sequence[Municipality],
    out_dir: Path | str,
    summary: DivergenceSummary | None = None,
) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    stem = f"report-{report.date.isoformat()}"
    json_path = write_json(out_dir / f"{stem}.json", report_payload(report, municipalities, summary))
    csv_path = atomic_write_text(out_dir / f"{stem}.csv", _frame_csv(report_frame(report, municipalities)))
    return json_path, csv_path


# CUSUM ---------------------------------------------------------------
def traces_frame(traces: Mapping[Tuple[str, str], CusumTrace]) -> pd.DataFrame:
    rows = []
    for (municipality, operator) in sorted(traces):
        for point in traces[(municipality, operator)].points:
            rows.append(
                (
                    municipality,
                    operator,
                    point.date.isoformat(),
                    format_number(point.value),
                    format_number(point.statistic),
                    "true" if point.alarm else "false",
                )
            )
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def write_cusum_traces(traces: Mapping[Tuple[str, str], CusumTrace], path: Path | str) -> Path:
    return atomic_write_text(path, _frame_csv(traces_frame(traces)))


def write_alarm_summary(alarms: Sequence[AlarmRecord], config: CusumConfig, path: Path | str) -> Path:
    payload = {
        "parameters": {
            "target_mean": config.target_mean,
            "allowance": config.allowance,
            "threshold": config.threshold,
            "reset_on_alarm": config.reset_on_alarm,
        },
        "alarms": {
            f"{a.municipality}/{a.operator}": {
                "municipality_id": a.municipality,
                "operator": a.operator,
                "first_alarm": a.first_alarm.isoformat(),
                "alarm_dates": [d.isoformat() for d in a.alarm_dates],
            }
            for a in alarms
        },
    }
    return write_json(path, payload)


# Scenario ------------------------------------------------------------
def write_world(world: World, out_dir: Path | str) -> Dict[str, Path]:
    """Write the five input CSVs of a generated world; returns them by input key."""
    out_dir = Path(out_dir)
    tables: Dict[str, pd.DataFrame] = {
        "municipalities": pd.DataFrame(
            [(m.id, m.name, m.population) for m in world.municipalities],
            columns=["id", "name", "population"],
        ),
        "centers": pd.DataFrame(
            [(c.center_id, mid) for c in world.centers for mid in c.members],
            columns=["center_id", "municipality_id"],
        ),
        "relations": pd.DataFrame(
            [
                (r.from_center, r.to_center, r.category.value, r.dimension, "" if r.order is None else r.order)
                for r in world.relations
            ],
            columns=["from_center", "to_center", "category", "dimension", "order"],
        ),
        "consumers": pd.DataFrame(
            [(c.municipality, c.operator, c.month, c.consumers) for c in world.consumers],
            columns=["municipality_id", "operator", "year_month", "consumers"],
        ),
        "complaints": pd.DataFrame(
            [(c.municipality, c.operator, c.date.isoformat(), c.count) for c in world.complaints],
            columns=["municipality_id", "operator", "date", "count"],
        ),
    }
    paths: Dict[str, Path] = {}
    for key, frame in tables.items():
        paths[key] = atomic_write_text(out_dir / f"{key}.csv", _frame_csv(frame))
    return paths


def write_scenario(scenario: Scenario, path: Path | str) -> Path:
    payload = scenario.describe()
    payload["factors"] = dict(sorted(scenario.factors.items()))
    return write_json(path, payload)
