from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from logic.errors import DomainError, IssueCollector
from logic.graph import GraphSignal, InfluenceGraph

_logger = logging.getLogger(__name__)

WINDOW_DAYS = 28
RATE_SCALE = 100_000

CONSUMER_COLUMNS = ["municipality_id", "operator", "year_month", "consumers"]
COMPLAINT_COLUMNS = ["municipality_id", "operator", "date", "count"]


@dataclass(frozen=True)
class ConsumerCount:
    municipality: str
    operator: str
    month: str  # YYYY-MM
    consumers: int


@dataclass(frozen=True)
class ComplaintRecord:
    municipality: str
    operator: str
    date: dt.date
    count: int


class RatePoint(NamedTuple):
    date: dt.date
    daily_rate: float
    ma28: float


@dataclass(frozen=True)
class RateSeries:
    municipality: str
    operator: str
    points: Tuple[RatePoint, ...]

    @property
    def key(self) -> Tuple[str, str]:
        return self.municipality, self.operator


def daily_rate(count: int, consumers: int) -> float:
    """Complaints per 100,000 consumers; MISSING (NaN) without a subscriber base."""
    if consumers <= 0:
        return math.nan
    return count * RATE_SCALE / consumers


def daily_rates(counts: np.ndarray, consumers: np.ndarray) -> np.ndarray:
    """Vectorised :func:`daily_rate`; unknown consumer counts are NaN."""
    counts = np.asarray(counts, dtype=np.float64)
    consumers = np.asarray(consumers, dtype=np.float64)
    rates = np.full(np.broadcast(counts, consumers).shape, np.nan)
    known = consumers > 0
    rates[known] = counts[known] * RATE_SCALE / consumers[known]
    return rates


def moving_average_28(rates: pd.Series, day: dt.date | pd.Timestamp) -> float:
    """Mean of the 28 daily rates ending on ``day``; MISSING unless all 28 are present."""
    stamp = pd.Timestamp(day)
    if len(rates) == 0 or stamp < rates.index[0] or stamp > rates.index[-1]:
        raise DomainError(f"{stamp.date()} is outside the series span")
    window = rates.loc[stamp - pd.Timedelta(days=WINDOW_DAYS - 1):stamp]
    if len(window) < WINDOW_DAYS or window.isna().any():
        return math.nan
    return float(window.to_numpy(dtype=np.float64).mean())


def trailing_means(rates: np.ndarray, window: int = WINDOW_DAYS) -> np.ndarray:
    """Complete-window trailing means along axis 0; the first ``window - 1`` rows are NaN."""
    out = np.full(rates.shape, np.nan)
    if rates.shape[0] >= window:
        out[window - 1:] = sliding_window_view(rates, window, axis=0).mean(axis=-1)
    return out


@dataclass(frozen=True, eq=False)
class _OperatorBlock:
    municipalities: Tuple[str, ...]
    rates: np.ndarray  # days x municipalities
    ma28: np.ndarray
    columns: Dict[str, int]


class ComplaintStore:
    """Immutable daily rate and 28-day moving-average tables per operator.

    All operators share one calendar, the span covered by any consumer month
    or complaint date. Build it with :meth:`from_frames` or :meth:`from_records`.
    """

    def __init__(self, dates: pd.DatetimeIndex, blocks: Dict[str, _OperatorBlock]) -> None:
        self._dates = dates
        self._blocks = blocks
        self._row = {stamp: i for i, stamp in enumerate(dates)}

    # Construction ------------------------------------------------------
    @classmethod
    def from_records(
        cls,
        consumers: Iterable[ConsumerCount],
        complaints: Iterable[ComplaintRecord],
    ) -> "ComplaintStore":
        consumer_frame = pd.DataFrame(
            [(c.municipality, c.operator, c.month, c.consumers) for c in consumers],
            columns=CONSUMER_COLUMNS,
        )
        complaint_frame = pd.DataFrame(
            [(c.municipality, c.operator, c.date, c.count) for c in complaints],
            columns=COMPLAINT_COLUMNS,
        )
        return cls.from_frames(consumer_frame, complaint_frame)

    @classmethod
    def from_frames(cls, consumers: pd.DataFrame, complaints: pd.DataFrame) -> "ComplaintStore":
        """Validate and pivot parsed consumer and complaint tables.

        An optional ``line`` column carries source line numbers into error
        reports. Complaint rows sharing a key are summed.
        """
        consumers = consumers.copy()
        complaints = complaints.copy()
        consumers["year_month"] = pd.to_datetime(consumers["year_month"].astype(str), format="%Y-%m").dt.to_period("M")
        complaints["date"] = pd.to_datetime(complaints["date"]).dt.normalize()

        issues = IssueCollector("consumers")
        if consumers.empty:
            issues.add("no consumer counts supplied")
        if (consumers["consumers"] < 0).any() or (complaints["count"] < 0).any():
            for _, row in consumers[consumers["consumers"] < 0].iterrows():
                issues.add("consumers must be non-negative", _line(row))
            for _, row in complaints[complaints["count"] < 0].iterrows():
                issues.add("count must be non-negative", _line(row), source="complaints")
        key = ["municipality_id", "operator", "year_month"]
        duplicated = consumers.duplicated(subset=key, keep="first")
        for _, row in consumers[duplicated].iterrows():
            issues.add(
                f"duplicate consumer count for {row['municipality_id']}/{row['operator']}/{row['year_month']}",
                _line(row),
            )
        issues.raise_if_any("invalid consumer/complaint data")

        complaints = (
            complaints.groupby(["municipality_id", "operator", "date"], as_index=False, sort=True)["count"].sum()
        )

        start = consumers["year_month"].min().start_time.normalize()
        end = consumers["year_month"].max().end_time.normalize()
        if not complaints.empty:
            start = min(start, complaints["date"].min())
            end = max(end, complaints["date"].max())
        dates = pd.date_range(start, end, freq="D")
        months = dates.to_period("M")

        blocks: Dict[str, _OperatorBlock] = {}
        operators = sorted(set(consumers["operator"]) | set(complaints["operator"]))
        for operator in operators:
            blocks[operator] = _build_block(
                consumers[consumers["operator"] == operator],
                complaints[complaints["operator"] == operator],
                dates,
                months,
            )

        _logger.info(
            "ingested complaint data operators=%d days=%d span=%s..%s",
            len(blocks),
            len(dates),
            dates[0].date(),
            dates[-1].date(),
        )
        return cls(dates, blocks)

    # Queries -----------------------------------------------------------
    @property
    def operators(self) -> Tuple[str, ...]:
        return tuple(self._blocks)

    @property
    def date_span(self) -> Tuple[dt.date, dt.date]:
        return self._dates[0].date(), self._dates[-1].date()

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self._dates

    def first_computable_date(self) -> dt.date:
        return (self._dates[0] + pd.Timedelta(days=WINDOW_DAYS - 1)).date()

    def series(self, municipality: str, operator: str) -> RateSeries:
        block = self._block(operator)
        column = block.columns.get(municipality)
        if column is None:
            rates = np.full(len(self._dates), np.nan)
            means = rates
        else:
            rates = block.rates[:, column]
            means = block.ma28[:, column]
        points = tuple(
            RatePoint(stamp.date(), float(rate), float(mean))
            for stamp, rate, mean in zip(self._dates, rates, means)
        )
        return RateSeries(municipality, operator, points)

    def signal_at(self, day: dt.date, operator: str, graph: InfluenceGraph) -> GraphSignal:
        """The ma28 signal over the graph's vertices; absent vertices are MISSING."""
        block = self._block(operator)
        row = self._row_of(day)
        values = self._align(block, block.ma28[row], graph.vertices)
        return GraphSignal(graph.vertices, values)

    def signal_block(
        self,
        operator: str,
        vertices: Sequence[str],
        start: dt.date | None = None,
        end: dt.date | None = None,
    ) -> Tuple[pd.DatetimeIndex, np.ndarray]:
        """ma28 values as a (vertices x days) block for a date range."""
        block = self._block(operator)
        first = self._row_of(start) if start is not None else 0
        last = self._row_of(end) if end is not None else len(self._dates) - 1
        if last < first:
            raise DomainError(f"empty date range {start}..{end}")
        window = block.ma28[first:last + 1]
        out = np.full((len(vertices), window.shape[0]), np.nan)
        positions = [(i, block.columns.get(vid)) for i, vid in enumerate(vertices)]
        rows = np.asarray([i for i, col in positions if col is not None], dtype=np.int64)
        cols = np.asarray([col for _, col in positions if col is not None], dtype=np.int64)
        if rows.size:
            out[rows] = window[:, cols].T
        return self._dates[first:last + 1], out

    # Internal helpers --------------------------------------------------
    def _block(self, operator: str) -> _OperatorBlock:
        try:
            return self._blocks[operator]
        except KeyError:
            known = ", ".join(self._blocks) or "(none)"
            raise DomainError(f"unknown operator {operator!r}; known operators: {known}") from None

    def _row_of(self, day: dt.date) -> int:
        stamp = pd.Timestamp(day).normalize()
        try:
            return self._row[stamp]
        except KeyError:
            first, last = self.date_span
            raise DomainError(f"{stamp.date()} is outside the data span {first}..{last}") from None

    @staticmethod
    def _align(block: _OperatorBlock, row_values: np.ndarray, vertices: Sequence[str]) -> np.ndarray:
        values = np.full(len(vertices), np.nan)
        for i, vid in enumerate(vertices):
            col = block.columns.get(vid)
            if col is not None:
                values[i] = row_values[col]
        return values


def _build_block(
    consumers: pd.DataFrame,
    complaints: pd.DataFrame,
    dates: pd.DatetimeIndex,
    months: pd.PeriodIndex,
) -> _OperatorBlock:
    municipalities = tuple(sorted(set(consumers["municipality_id"]) | set(complaints["municipality_id"])))

    monthly = consumers.pivot(index="year_month", columns="municipality_id", values="consumers")
    per_day = monthly.reindex(index=months, columns=list(municipalities)).to_numpy(dtype=np.float64)

    if complaints.empty:
        counts = np.zeros((len(dates), len(municipalities)))
    else:
        counts = (
            complaints.pivot(index="date", columns="municipality_id", values="count")
            .reindex(index=dates, columns=list(municipalities))
            .fillna(0.0)
            .to_numpy(dtype=np.float64)
        )

    rates = daily_rates(counts, per_day)
    ma28 = trailing_means(rates)
    for array in (rates, ma28):
        array.flags.writeable = False
    return _OperatorBlock(
        municipalities=municipalities,
        rates=rates,
        ma28=ma28,
        columns={mid: i for i, mid in enumerate(municipalities)},
    )


def _line(row: pd.Series) -> int | None:
    value = row.get("line")
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return int(value)


def month_end(month: str | dt.date) -> dt.date:
    """Last calendar day of a ``YYYY-MM`` month (or of the month containing a date)."""
    period = pd.Period(month, freq="M")
    return period.end_time.date()


def months_between(first: dt.date, last: dt.date) -> List[str]:
    return [str(p) for p in pd.period_range(pd.Period(first, freq="M"), pd.Period(last, freq="M"), freq="M")]
