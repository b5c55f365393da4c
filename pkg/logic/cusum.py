from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd

from logic.complaints import ComplaintStore
from logic.errors import UsageError
from logic.graph import DiscrepancyValue, InfluenceGraph, discrepancy_matrix

_logger = logging.getLogger(__name__)

Key = Tuple[str, str]


@dataclass(frozen=True)
class CusumConfig:
    """Upper one-sided CUSUM parameters; ``target_mean`` 1.0 is the neutral discrepancy."""

    target_mean: float = 1.0
    allowance: float = 0.25
    threshold: float = 5.0
    reset_on_alarm: bool = True

    def __post_init__(self) -> None:
        if not self.threshold > 0.0:
            raise UsageError(f"CUSUM threshold must be positive, got {self.threshold}")
        if not self.allowance >= 0.0:
            raise UsageError(f"CUSUM allowance must be non-negative, got {self.allowance}")


class CusumPoint(NamedTuple):
    date: dt.date
    value: float
    statistic: float
    alarm: bool


@dataclass(frozen=True)
class CusumTrace:
    points: Tuple[CusumPoint, ...]

    @property
    def alarm_dates(self) -> List[dt.date]:
        return [p.date for p in self.points if p.alarm]

    @property
    def statistics(self) -> np.ndarray:
        return np.asarray([p.statistic for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class AlarmRecord:
    municipality: str
    operator: str
    alarm_dates: Tuple[dt.date, ...]

    @property
    def first_alarm(self) -> dt.date:
        return self.alarm_dates[0]


@dataclass(frozen=True, eq=False)
class DiscrepancyHistory:
    """Discrepancy per day (rows) and ``(municipality, operator)`` key (columns)."""

    dates: Tuple[dt.date, ...]
    keys: Tuple[Key, ...]
    values: np.ndarray

    def series(self, municipality: str, operator: str) -> List[Tuple[dt.date, float]]:
        column = self.keys.index((municipality, operator))
        return list(zip(self.dates, self.values[:, column].tolist()))


# Recursion -----------------------------------------------------------
def cusum_block(values: np.ndarray, config: CusumConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Run the recursion over a (steps x series) block.

    ``S_t = max(0, S_{t-1} + d_t - mu0 - k)``. NaN inputs carry ``S`` forward and
    never alarm; ``+inf`` alarms at once. Returns ``(statistics, alarms)``, the
    statistic being recorded before any reset.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    steps, width = values.shape
    statistics = np.zeros((steps, width))
    alarms = np.zeros((steps, width), dtype=bool)

    drift = config.target_mean + config.allowance
    current = np.zeros(width)
    for t in range(steps):
        row = values[t]
        present = ~np.isnan(row)
        with np.errstate(invalid="ignore"):
            stepped = np.maximum(0.0, current + (row - drift))
        updated = np.where(present, stepped, current)
        updated[present & np.isposinf(row)] = math.inf
        fired = present & (updated >= config.threshold)

        statistics[t] = updated
        alarms[t] = fired
        current = np.where(fired, 0.0, updated) if config.reset_on_alarm else updated
    return statistics, alarms


def cusum(
    series: Iterable[Tuple[dt.date, float | DiscrepancyValue | None]] | pd.Series,
    config: CusumConfig | None = None,
) -> CusumTrace:
    config = config or CusumConfig()
    if isinstance(series, pd.Series):
        pairs = [(pd.Timestamp(i).date(), v) for i, v in series.items()]
    else:
        pairs = list(series)
    if not pairs:
        return CusumTrace(())

    dates = [day for day, _ in pairs]
    values = np.asarray([_as_float(v) for _, v in pairs], dtype=np.float64)
    statistics, alarms = cusum_block(values, config)
    return CusumTrace(
        tuple(
            CusumPoint(day, float(value), float(stat), bool(alarm))
            for day, value, stat, alarm in zip(dates, values, statistics[:, 0], alarms[:, 0])
        )
    )


# History -------------------------------------------------------------
def discrepancy_history(
    graph: InfluenceGraph,
    store: ComplaintStore,
    operators: Sequence[str] | None = None,
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> DiscrepancyHistory:
    """Discrepancy of every vertex and operator for each day of a range.

    Defaults to the first computable date through the end of the data.
    """
    operators = tuple(operators) if operators else store.operators
    start = start or store.first_computable_date()
    end = end or store.date_span[1]

    blocks: List[np.ndarray] = []
    keys: List[Key] = []
    dates: Tuple[dt.date, ...] = ()
    for operator in operators:
        index, signals = store.signal_block(operator, graph.vertices, start, end)
        values, _ = discrepancy_matrix(graph, signals)
        blocks.append(values.T)
        keys.extend((vid, operator) for vid in graph.vertices)
        dates = tuple(stamp.date() for stamp in index)

    matrix = np.hstack(blocks) if blocks else np.zeros((0, 0))
    _logger.info("discrepancy history days=%d keys=%d", len(dates), len(keys))
    return DiscrepancyHistory(dates, tuple(keys), matrix)


def history_traces(
    history: DiscrepancyHistory,
    config: CusumConfig | None = None,
    keys: Iterable[Key] | None = None,
) -> Dict[Key, CusumTrace]:
    config = config or CusumConfig()
    wanted = list(keys) if keys is not None else list(history.keys)
    position = {key: j for j, key in enumerate(history.keys)}
    columns = [position[key] for key in wanted]
    statistics, alarms = cusum_block(history.values[:, columns], config)
    traces: Dict[Key, CusumTrace] = {}
    for j, key in enumerate(wanted):
        values = history.values[:, columns[j]]
        traces[key] = CusumTrace(
            tuple(
                CusumPoint(day, float(v), float(s), bool(a))
                for day, v, s, a in zip(history.dates, values, statistics[:, j], alarms[:, j])
            )
        )
    return traces


def scan_all(
    history: DiscrepancyHistory | Mapping[Key, Sequence[Tuple[dt.date, float | DiscrepancyValue | None]]],
    config: CusumConfig | None = None,
) -> List[AlarmRecord]:
    """Keys with at least one alarm, ordered by first alarm date then key."""
    config = config or CusumConfig()
    records: List[AlarmRecord] = []

    if isinstance(history, DiscrepancyHistory):
        if history.values.size:
            _, alarms = cusum_block(history.values, config)
            for column in np.flatnonzero(alarms.any(axis=0)):
                municipality, operator = history.keys[column]
                days = tuple(history.dates[t] for t in np.flatnonzero(alarms[:, column]))
                records.append(AlarmRecord(municipality, operator, days))
    else:
        for (municipality, operator), series in history.items():
            days = tuple(cusum(series, config).alarm_dates)
            if days:
                records.append(AlarmRecord(municipality, operator, days))

    records.sort(key=lambda r: (r.first_alarm, r.municipality, r.operator))
    _logger.info("cusum scan alarms=%d", len(records))
    return records


def _as_float(value: float | DiscrepancyValue | None) -> float:
    if value is None:
        return math.nan
    if isinstance(value, DiscrepancyValue):
        return value.value
    return float(value)
