from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from logic.complaints import ComplaintStore, month_end, months_between
from logic.errors import DomainError, UsageError
from logic.graph import DiscrepancyValue, InfluenceGraph, discrepancy
from logic.influence import Municipality

_logger = logging.getLogger(__name__)

DEFAULT_K = 5
TIE_BREAK_POLICY = "discrepancy_desc>rate_desc>municipality_asc>operator_asc"


@dataclass(frozen=True)
class Stratum:
    """Population band ``(min_population, max_population]``; ``None`` means unbounded."""

    name: str
    min_population: int
    max_population: int | None = None

    def __post_init__(self) -> None:
        if self.max_population is not None and self.min_population >= self.max_population:
            raise UsageError(f"stratum {self.name!r}: min {self.min_population} must be below max {self.max_population}")

    def contains(self, population: int) -> bool:
        if population <= self.min_population:
            return False
        return self.max_population is None or population <= self.max_population


DEFAULT_STRATA: Tuple[Stratum, ...] = (
    Stratum("over_500k", 500_000, None),
    Stratum("200k_to_500k", 200_000, 500_000),
)


class RankingMode(str, Enum):
    JOINT = "joint"
    PER_OPERATOR = "per_operator"


@dataclass(frozen=True)
class RankedEntry:
    municipality: str
    operator: str
    discrepancy: DiscrepancyValue
    rate_ma28: float
    rank_by_discrepancy: int
    rank_by_rate: int
    flagged: bool

    @property
    def rank_pair(self) -> str:
        return f"{self.rank_by_discrepancy}-{self.rank_by_rate}"


@dataclass(frozen=True)
class ExcludedEntry:
    stratum: str
    operator: str
    municipality: str
    reason: str


@dataclass(frozen=True)
class ReportSection:
    stratum: Stratum
    operator: str | None
    entries: Tuple[RankedEntry, ...]

    @property
    def label(self) -> str:
        return self.stratum.name if self.operator is None else f"{self.stratum.name}/{self.operator}"


@dataclass(frozen=True)
class InspectionReport:
    date: dt.date
    k: int
    mode: RankingMode
    operators: Tuple[str, ...]
    strata: Tuple[Stratum, ...]
    sections: Tuple[ReportSection, ...]
    excluded: Tuple[ExcludedEntry, ...] = ()
    tie_break: str = TIE_BREAK_POLICY

    def section(self, stratum: str, operator: str | None = None) -> ReportSection:
        for section in self.sections:
            if section.stratum.name == stratum and section.operator == operator:
                return section
        raise DomainError(f"report has no section {stratum!r}/{operator!r}")


@dataclass(frozen=True)
class DivergenceSummary:
    per_section: Dict[str, float] = field(default_factory=dict)
    overall: float = 0.0


@dataclass(frozen=True)
class _Candidate:
    municipality: str
    operator: str
    discrepancy: DiscrepancyValue
    rate: float


# Ranking -------------------------------------------------------------
def rank_stratum(
    discrepancies: Mapping[str, DiscrepancyValue | float],
    rates: Mapping[str, float],
    members: Iterable[str],
    k: int = DEFAULT_K,
    *,
    operator: str = "",
) -> List[RankedEntry]:
    """Rank one operator's municipalities inside a stratum, worst first.

    Members with an UNDEFINED discrepancy or a MISSING rate are left out.
    """
    candidates, _ = _collect_candidates(discrepancies, rates, members, operator, stratum="")
    return _rank(candidates, k)


def month_end_report(
    graph: InfluenceGraph,
    store: ComplaintStore,
    municipalities: Iterable[Municipality],
    operators: Sequence[str] | None = None,
    strata: Sequence[Stratum] = DEFAULT_STRATA,
    k: int = DEFAULT_K,
    month: str | dt.date | None = None,
    *,
    mode: RankingMode = RankingMode.JOINT,
) -> InspectionReport:
    """Rank municipality-operator pairs on the last day of ``month``.

    ``JOINT`` ranks every operator together inside a stratum; ``PER_OPERATOR``
    gives each operator its own section.
    """
    _check_k(k)
    if month is None:
        month = store.date_span[1]
    day = month_end(month)
    first = store.first_computable_date()
    if day < first:
        raise UsageError(
            f"month {str(month)[:7]} ends on {day}, before a complete 28-day window; "
            f"first computable date is {first}"
        )

    operators = tuple(operators) if operators else store.operators
    populations = {m.id: m.population for m in municipalities}

    per_operator: Dict[str, Tuple[Dict[str, DiscrepancyValue], Dict[str, float]]] = {}
    for operator in operators:
        signal = store.signal_at(day, operator, graph)
        per_operator[operator] = (dict(discrepancy(graph, signal)), signal.as_dict())

    sections: List[ReportSection] = []
    excluded: List[ExcludedEntry] = []
    for stratum in strata:
        members = sorted(
            vid for vid in graph.vertices if vid in populations and stratum.contains(populations[vid])
        )
        groups = [(None, operators)] if mode is RankingMode.JOINT else [(op, (op,)) for op in operators]
        for label, ops in groups:
            candidates: List[_Candidate] = []
            for operator in ops:
                disc, rates = per_operator[operator]
                found, skipped = _collect_candidates(disc, rates, members, operator, stratum=stratum.name)
                candidates.extend(found)
                excluded.extend(skipped)
            sections.append(ReportSection(stratum, label, tuple(_rank(candidates, k))))

    _logger.info(
        "month-end report date=%s operators=%d sections=%d excluded=%d",
        day,
        len(operators),
        len(sections),
        len(excluded),
    )
    return InspectionReport(
        date=day,
        k=k,
        mode=mode,
        operators=operators,
        strata=tuple(strata),
        sections=tuple(sections),
        excluded=tuple(excluded),
    )


def monthly_reports(
    graph: InfluenceGraph,
    store: ComplaintStore,
    municipalities: Iterable[Municipality],
    first_month: str | dt.date,
    last_month: str | dt.date,
    operators: Sequence[str] | None = None,
    strata: Sequence[Stratum] = DEFAULT_STRATA,
    k: int = DEFAULT_K,
    *,
    mode: RankingMode = RankingMode.JOINT,
) -> List[InspectionReport]:
    """One month-end report per calendar month from ``first_month`` to ``last_month`` inclusive."""
    first, last = month_end(first_month), month_end(last_month)
    if last < first:
        raise UsageError(f"month range is empty: {str(first_month)[:7]} comes after {str(last_month)[:7]}")
    municipalities = list(municipalities)
    reports = [
        month_end_report(graph, store, municipalities, operators, strata, k, month, mode=mode)
        for month in months_between(first, last)
    ]
    _logger.info("monthly reports %s..%s: %d months", first, last, len(reports))
    return reports


def divergence_summary(report: InspectionReport, k: int | None = None) -> DivergenceSummary:
    """Share of the discrepancy top-K that the raw-rate top-K would have missed."""
    k = report.k if k is None else k
    _check_k(k)
    per_section: Dict[str, float] = {}
    total_top = 0
    total_flagged = 0
    for section in report.sections:
        top = [e for e in section.entries if e.rank_by_discrepancy <= k]
        flagged = sum(1 for e in top if e.rank_by_rate > k)
        per_section[section.label] = flagged / len(top) if top else 0.0
        total_top += len(top)
        total_flagged += flagged
    return DivergenceSummary(per_section, total_flagged / total_top if total_top else 0.0)


# Internal helpers ----------------------------------------------------
def _check_k(k: int) -> None:
    if k < 1:
        raise DomainError(f"K must be at least 1, got {k}")


def _collect_candidates(
    discrepancies: Mapping[str, DiscrepancyValue | float],
    rates: Mapping[str, float],
    members: Iterable[str],
    operator: str,
    *,
    stratum: str,
) -> Tuple[List[_Candidate], List[ExcludedEntry]]:
    found: List[_Candidate] = []
    skipped: List[ExcludedEntry] = []
    for vid in members:
        raw = discrepancies.get(vid)
        rate = rates.get(vid, math.nan)
        if raw is None:
            value = DiscrepancyValue(math.nan, rate, math.nan)
        elif isinstance(raw, DiscrepancyValue):
            value = raw
        else:
            value = DiscrepancyValue(float(raw), rate, math.nan)

        if value.is_undefined:
            skipped.append(ExcludedEntry(stratum, operator, vid, "undefined discrepancy"))
        elif rate is None or math.isnan(rate):
            skipped.append(ExcludedEntry(stratum, operator, vid, "missing rate"))
        else:
            found.append(_Candidate(vid, operator, value, float(rate)))
    return found, skipped


def _discrepancy_key(candidate: _Candidate) -> tuple:
    value = candidate.discrepancy.value
    head = (0, 0.0) if math.isinf(value) else (1, -value)
    return (*head, -candidate.rate, candidate.municipality, candidate.operator)


def _rate_key(candidate: _Candidate) -> tuple:
    return (-candidate.rate, candidate.municipality, candidate.operator)


def _rank(candidates: List[_Candidate], k: int) -> List[RankedEntry]:
    _check_k(k)
    by_rate = {id(c): rank for rank, c in enumerate(sorted(candidates, key=_rate_key), start=1)}
    entries: List[RankedEntry] = []
    for rank, candidate in enumerate(sorted(candidates, key=_discrepancy_key), start=1):
        rate_rank = by_rate[id(candidate)]
        entries.append(
            RankedEntry(
                municipality=candidate.municipality,
                operator=candidate.operator,
                discrepancy=candidate.discrepancy,
                rate_ma28=candidate.rate,
                rank_by_discrepancy=rank,
                rank_by_rate=rate_rank,
                flagged=rank <= k and rate_rank > k,
            )
        )
    return entries
