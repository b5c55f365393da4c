from __future__ import annotations

import math
from typing import Iterable, List, Mapping, Sequence

from rich.console import Console
from rich.table import Table

from logic.cusum import AlarmRecord
from logic.influence import BuildDiagnostics
from logic.ranking import DivergenceSummary, InspectionReport

DISPLAY_DIGITS = 4


def make_console() -> Console:
    """A console bound to the current ``sys.stdout`` with no colour or wrapping surprises."""
    return Console(highlight=False, soft_wrap=True, width=120)


def fmt(value: float) -> str:
    """Human-readable number with four significant digits."""
    if value is None or math.isnan(value):
        return "n/a"
    if math.isinf(value):
        return "inf"
    return format(value, f".{DISPLAY_DIGITS}g")


def diagnostics_table(diagnostics: BuildDiagnostics) -> Table:
    table = Table(title="Influence graph", show_header=False)
    table.add_column("item")
    table.add_column("value", justify="right")
    table.add_row("vertices", str(diagnostics.n_vertices))
    table.add_row("edges", str(diagnostics.n_edges))
    table.add_row("isolated vertices", str(len(diagnostics.isolated_vertices)))
    table.add_row("dropped self-loops", str(len(diagnostics.dropped_self_loops)))
    return table


def report_tables(report: InspectionReport, names: Mapping[str, str]) -> List[Table]:
    """Top-K rows of every section; flagged rows are those the raw-rate ranking would miss."""
    tables: List[Table] = []
    for section in report.sections:
        table = Table(title=f"{section.label} on {report.date.isoformat()} (top {report.k})")
        table.add_column("#", justify="right")
        table.add_column("municipality")
        table.add_column("operator")
        table.add_column("discrepancy", justify="right")
        table.add_column("ma28 rate", justify="right")
        table.add_column("rank d-r", justify="right")
        table.add_column("flag")
        for entry in section.entries[: report.k]:
            label = names.get(entry.municipality) or entry.municipality
            table.add_row(
                str(entry.rank_by_discrepancy),
                f"{label} ({entry.municipality})" if label != entry.municipality else label,
                entry.operator,
                fmt(entry.discrepancy.value),
                fmt(entry.rate_ma28),
                entry.rank_pair,
                "*" if entry.flagged else "",
            )
        if not section.entries:
            table.caption = "no rankable municipalities"
        tables.append(table)
    return tables


def divergence_line(summary: DivergenceSummary) -> str:
    return f"divergence overall={fmt(summary.overall)}"


def alarm_table(alarms: Sequence[AlarmRecord]) -> Table:
    table = Table(title=f"CUSUM alarms ({len(alarms)})")
    table.add_column("municipality")
    table.add_column("operator")
    table.add_column("first alarm")
    table.add_column("alarms", justify="right")
    for alarm in alarms:
        table.add_row(alarm.municipality, alarm.operator, alarm.first_alarm.isoformat(), str(len(alarm.alarm_dates)))
    return table


def print_tables(console: Console, tables: Iterable[Table]) -> None:
    for table in tables:
        console.print(table)
