from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from logic.complaints import RATE_SCALE, WINDOW_DAYS, ComplaintRecord, ConsumerCount
from logic.errors import UsageError
from logic.influence import (
    GOODS_SERVICES_AREAS,
    METRO_THEMES,
    Municipality,
    RelationCategory,
    RelationRecord,
    UrbanCenter,
)

_logger = logging.getLogger(__name__)

# Baseline complaints per 100,000 consumers per day. Town factors are integers
# up to this value so that noiseless rates stay exact.
BASE_RATE = 10
METRO_CENTER = "C_METRO"


class ScenarioKind(str, Enum):
    FLAT = "flat"
    LOCAL_ANOMALY = "local_anomaly"
    REGIONAL_ANOMALY = "regional_anomaly"
    STEP_CHANGE = "step_change"


@dataclass(frozen=True)
class ScenarioParameters:
    kind: ScenarioKind = ScenarioKind.FLAT
    seed: int = 0
    magnitude: float = 3.0
    start: dt.date = dt.date(2021, 1, 1)
    days: int = 120
    onset: dt.date | None = None
    operators: Tuple[str, ...] = ("A", "B")
    anomaly_operator: str | None = None
    regions: int = 2
    towns_per_region: int = 5
    region: int = 0
    noise: float = 0.0

    def __post_init__(self) -> None:
        if self.days < WINDOW_DAYS:
            raise UsageError(f"days must be at least {WINDOW_DAYS}, got {self.days}")
        if self.magnitude <= 0:
            raise UsageError(f"magnitude must be positive, got {self.magnitude}")
        if self.kind is ScenarioKind.STEP_CHANGE and self.magnitude < 1:
            raise UsageError(f"step_change needs magnitude >= 1, got {self.magnitude}")
        if self.regions < 1 or self.towns_per_region < 1:
            raise UsageError("regions and towns_per_region must be at least 1")
        if not 0 <= self.region < self.regions:
            raise UsageError(f"region must lie in [0, {self.regions}), got {self.region}")
        if not self.operators or len(set(self.operators)) != len(self.operators):
            raise UsageError(f"operators must be non-empty and distinct, got {self.operators}")
        if self.anomaly_operator is not None and self.anomaly_operator not in self.operators:
            raise UsageError(f"anomaly operator {self.anomaly_operator!r} is not one of {self.operators}")
        if self.noise < 0:
            raise UsageError(f"noise must be non-negative, got {self.noise}")
        onset = self.resolved_onset
        if not self.start <= onset <= self.end:
            raise UsageError(f"onset {onset} lies outside {self.start}..{self.end}")

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.days - 1)

    @property
    def resolved_onset(self) -> dt.date:
        return self.onset or self.start + dt.timedelta(days=self.days // 2)

    @property
    def resolved_operator(self) -> str:
        return self.anomaly_operator or self.operators[0]


@dataclass(frozen=True)
class World:
    municipalities: Tuple[Municipality, ...]
    centers: Tuple[UrbanCenter, ...]
    relations: Tuple[RelationRecord, ...]
    consumers: Tuple[ConsumerCount, ...]
    complaints: Tuple[ComplaintRecord, ...]


@dataclass(frozen=True)
class Scenario:
    """A generated world plus which municipalities the anomaly touches.

    ``scaled`` lists the municipalities whose generated rates change;
    ``affected`` the ones whose expectation is formed inside the anomaly,
    ``origin`` where it starts.
    """

    parameters: ScenarioParameters
    world: World
    scaled: Tuple[str, ...] = ()
    affected: Tuple[str, ...] = ()
    origin: Tuple[str, ...] = ()
    factors: Dict[str, int] = field(default_factory=dict)

    @property
    def kind(self) -> ScenarioKind:
        return self.parameters.kind

    def describe(self) -> Dict[str, object]:
        p = self.parameters
        return {
            "kind": p.kind.value,
            "seed": p.seed,
            "magnitude": p.magnitude,
            "start": p.start.isoformat(),
            "end": p.end.isoformat(),
            "onset": p.resolved_onset.isoformat(),
            "operators": list(p.operators),
            "anomaly_operator": p.resolved_operator,
            "region": p.region,
            "noise": p.noise,
            "scaled": list(self.scaled),
            "affected": list(self.affected),
            "origin": list(self.origin),
        }


# Generation ----------------------------------------------------------
def generate_scenario(params: ScenarioParameters) -> Scenario:
    """Build a deterministic synthetic world for ``params``.

    One metropolitan center of two municipalities feeds one hub per region;
    each hub feeds its towns and the hubs feed the metropolis back. With zero
    noise every daily rate is an exact integer per 100,000 consumers.
    """
    rng = np.random.default_rng(params.seed)

    municipalities, centers, hubs, towns = _layout(params, rng)
    relations = _relations(params, rng, hubs, towns)

    factors: Dict[str, int] = {m.id: BASE_RATE for m in municipalities}
    if params.kind is not ScenarioKind.FLAT:
        for r, members in enumerate(towns):
            for j, mid in enumerate(members):
                factors[mid] = BASE_RATE - (j + r) % 5

    scaled, affected, origin = _anomaly_sets(params, hubs, towns)
    if params.kind in (ScenarioKind.LOCAL_ANOMALY, ScenarioKind.STEP_CHANGE):
        # a single target always starts at the hub rate: baseline discrepancy 1
        factors[origin[0]] = BASE_RATE

    dates = pd.date_range(params.start, params.end, freq="D")
    months = pd.period_range(dates[0], dates[-1], freq="M")
    day_month = np.searchsorted(months.start_time.normalize(), dates, side="right") - 1
    onset_row = (pd.Timestamp(params.resolved_onset) - dates[0]).days

    consumers: List[ConsumerCount] = []
    complaints: List[ComplaintRecord] = []
    for operator in params.operators:
        for muni in municipalities:
            share = rng.uniform(0.2, 0.45)
            base_units = max(1, int(muni.population * share) // RATE_SCALE)
            units = base_units + rng.integers(0, 2, size=len(months))
            for month, u in zip(months, units):
                consumers.append(ConsumerCount(muni.id, operator, str(month), int(u) * RATE_SCALE))

            counts = factors[muni.id] * units[day_month].astype(np.float64)
            if operator == params.resolved_operator and muni.id in scaled:
                counts = _apply_anomaly(params, counts, onset_row)
            if params.noise > 0:
                counts = counts * (1.0 + params.noise * rng.standard_normal(len(counts)))
            counts = np.maximum(0, np.rint(counts)).astype(np.int64)

            for stamp, count in zip(dates, counts):
                if count > 0:
                    complaints.append(ComplaintRecord(muni.id, operator, stamp.date(), int(count)))

    world = World(
        municipalities=tuple(municipalities),
        centers=tuple(centers),
        relations=tuple(relations),
        consumers=tuple(consumers),
        complaints=tuple(complaints),
    )
    _logger.info(
        "generated scenario kind=%s municipalities=%d relations=%d complaint_rows=%d",
        params.kind.value,
        len(municipalities),
        len(relations),
        len(complaints),
    )
    return Scenario(params, world, scaled, affected, origin, factors)


# Internal helpers ----------------------------------------------------
def _layout(
    params: ScenarioParameters,
    rng: np.random.Generator,
) -> Tuple[List[Municipality], List[UrbanCenter], List[str], List[List[str]]]:
    municipalities = [
        Municipality("M00", "Metropolis core", int(rng.integers(1_500_000, 2_500_000))),
        Municipality("M01", "Metropolis ring", int(rng.integers(600_000, 1_000_000))),
    ]
    centers = [UrbanCenter(METRO_CENTER, ("M00", "M01"))]
    hubs: List[str] = []
    towns: List[List[str]] = []
    for r in range(params.regions):
        hub = f"H{r:02d}"
        hubs.append(hub)
        municipalities.append(Municipality(hub, f"Hub {r}", int(rng.integers(550_000, 900_000))))
        centers.append(UrbanCenter(f"C_{hub}", (hub,)))
        members = []
        for j in range(params.towns_per_region):
            town = f"T{r:02d}{j:02d}"
            members.append(town)
            municipalities.append(Municipality(town, f"Town {r}-{j}", int(rng.integers(210_000, 490_000))))
            centers.append(UrbanCenter(f"C_{town}", (town,)))
        towns.append(members)
    return municipalities, centers, hubs, towns


def _relations(
    params: ScenarioParameters,
    rng: np.random.Generator,
    hubs: List[str],
    towns: List[List[str]],
) -> List[RelationRecord]:
    relations: List[RelationRecord] = []
    for r, hub in enumerate(hubs):
        for area in GOODS_SERVICES_AREAS:
            relations.append(
                RelationRecord(METRO_CENTER, f"C_{hub}", RelationCategory.GOODS_SERVICES, area, int(rng.integers(1, 4)))
            )
        for theme in METRO_THEMES:
            relations.append(
                RelationRecord(f"C_{hub}", METRO_CENTER, RelationCategory.METRO_LINK, theme, int(rng.integers(1, 4)))
            )
        for j, town in enumerate(towns[r]):
            if j == len(towns[r]) - 1 and j > 0:
                relations.append(RelationRecord(f"C_{hub}", f"C_{town}", RelationCategory.FULL_LINK))
                continue
            n_areas = int(rng.integers(1, len(GOODS_SERVICES_AREAS) + 1))
            for area in rng.choice(GOODS_SERVICES_AREAS, size=n_areas, replace=False):
                relations.append(
                    RelationRecord(
                        f"C_{hub}", f"C_{town}", RelationCategory.GOODS_SERVICES, str(area), int(rng.integers(1, 4))
                    )
                )
    return relations


def _anomaly_sets(
    params: ScenarioParameters,
    hubs: List[str],
    towns: List[List[str]],
) -> Tuple[Tuple[str, ...], Tuple[str, ...], Tuple[str, ...]]:
    region_towns = towns[params.region]
    if params.kind in (ScenarioKind.LOCAL_ANOMALY, ScenarioKind.STEP_CHANGE):
        # With five or more towns this is the one whose default factor is BASE_RATE.
        target = region_towns[(5 - params.region % 5) % 5 % len(region_towns)]
        return (target,), (target,), (target,)
    if params.kind is ScenarioKind.REGIONAL_ANOMALY:
        hub = hubs[params.region]
        return (hub, *region_towns), tuple(region_towns), (hub,)
    return (), (), ()


def _apply_anomaly(params: ScenarioParameters, counts: np.ndarray, onset_row: int) -> np.ndarray:
    counts = counts.copy()
    if params.kind is ScenarioKind.STEP_CHANGE:
        # One impulse every 28 days keeps exactly one inside each trailing
        # window, so the moving average jumps to magnitude x baseline at onset.
        baseline = counts[onset_row::WINDOW_DAYS].copy()
        counts[onset_row::WINDOW_DAYS] = baseline + (params.magnitude - 1.0) * WINDOW_DAYS * baseline
    else:
        counts[onset_row:] = counts[onset_row:] * params.magnitude
    return counts
