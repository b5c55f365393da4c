from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

from logic.errors import IssueCollector, UsageError, ValidationError
from logic.graph import InfluenceGraph, normalize

_logger = logging.getLogger(__name__)

GOODS_SERVICES_AREAS: Tuple[str, ...] = (
    "clothing and footwear",
    "furniture and electronics",
    "low- and medium-complexity healthcare",
    "high-complexity healthcare",
    "higher education",
    "cultural activities",
    "sports activities",
    "airport",
    "newspapers",
    "public transportation",
)

METRO_THEMES: Tuple[str, ...] = (
    "public management",
    "business management",
    "road and waterway links",
    "airway links",
)


class RelationCategory(str, Enum):
    GOODS_SERVICES = "goods_services"
    METRO_LINK = "metro_link"
    FULL_LINK = "full_link"


def normalise_text(text: str) -> str:
    """Lower-case, fold punctuation to spaces and collapse whitespace."""
    if not text:
        return ""

    chars: list[str] = []
    for ch in text.lower():
        chars.append(ch if ch.isalnum() else " ")

    return " ".join("".join(chars).split())


_AREA_KEYS = {normalise_text(name): name for name in GOODS_SERVICES_AREAS}
_THEME_KEYS = {normalise_text(name): name for name in METRO_THEMES}


@dataclass(frozen=True)
class Municipality:
    id: str
    name: str
    population: int


@dataclass(frozen=True)
class UrbanCenter:
    center_id: str
    members: Tuple[str, ...]


@dataclass(frozen=True)
class RelationRecord:
    from_center: str
    to_center: str
    category: RelationCategory
    dimension: str = ""
    order: int | None = None
    line: int | None = None

    @property
    def pair(self) -> Tuple[str, str]:
        return self.from_center, self.to_center


@dataclass(frozen=True)
class BuildConfig:
    """Order discounts (index 0 = 1st order) and the fixed averaging denominators."""

    goods_services_discounts: Tuple[float, float, float] = (1.0, 0.95, 0.90)
    metro_discounts: Tuple[float, float, float] = (1.0, 0.50, 1.0 / 3.0)
    goods_services_dimension_count: int = len(GOODS_SERVICES_AREAS)
    metro_dimension_count: int = len(METRO_THEMES)

    def __post_init__(self) -> None:
        for label, discounts in (
            ("goods_services_discounts", self.goods_services_discounts),
            ("metro_discounts", self.metro_discounts),
        ):
            if len(discounts) != 3:
                raise UsageError(f"{label} needs one discount per order (3), got {len(discounts)}")
            if any(not 0.0 < d <= 1.0 for d in discounts):
                raise UsageError(f"{label} must lie in (0, 1], got {discounts}")
            if any(later > earlier for earlier, later in zip(discounts, discounts[1:])):
                raise UsageError(f"{label} must not increase with order, got {discounts}")

    def discount(self, category: RelationCategory, order: int) -> float:
        table = (
            self.goods_services_discounts
            if category is RelationCategory.GOODS_SERVICES
            else self.metro_discounts
        )
        return table[order - 1]


@dataclass
class BuildDiagnostics:
    n_vertices: int = 0
    n_edges: int = 0
    isolated_vertices: List[str] = field(default_factory=list)
    dropped_self_loops: List[Tuple[str, str]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, object]:
        return {
            "vertices": self.n_vertices,
            "edges": self.n_edges,
            "isolated_vertices": len(self.isolated_vertices),
            "isolated_vertex_ids": list(self.isolated_vertices),
            "dropped_self_loops": [list(pair) for pair in self.dropped_self_loops],
            "warnings": list(self.warnings),
        }


@dataclass
class GraphBuild:
    graph: InfluenceGraph
    diagnostics: BuildDiagnostics


# Scoring -------------------------------------------------------------
def center_influence_score(relations: Sequence[RelationRecord], config: BuildConfig | None = None) -> float:
    """Strength of one influencing center over one influenced center.

    Goods/services relations average the order discounts over the ten areas and
    metropolis links over the four themes, absent dimensions counting as zero.
    A full link carries all of the influence.
    """
    config = config or BuildConfig()
    issues = IssueCollector("relations")
    if not relations:
        return 0.0

    pairs = {record.pair for record in relations}
    if len(pairs) > 1:
        issues.add(f"records span several center pairs: {sorted(pairs)}")
        issues.raise_if_any("cannot score relations")

    categories = {record.category for record in relations}
    pair = relations[0].pair
    if len(categories) > 1:
        for record in relations:
            issues.add(
                f"pair {pair[0]}->{pair[1]} mixes categories ({', '.join(sorted(c.value for c in categories))})",
                record.line,
            )
        issues.raise_if_any("mixed relation categories")

    category = categories.pop()
    if category is RelationCategory.FULL_LINK:
        if len(relations) > 1:
            for record in relations[1:]:
                issues.add(f"duplicate full_link for pair {pair[0]}->{pair[1]}", record.line)
            issues.raise_if_any("duplicate relations")
        return 1.0

    known = _AREA_KEYS if category is RelationCategory.GOODS_SERVICES else _THEME_KEYS
    denominator = (
        config.goods_services_dimension_count
        if category is RelationCategory.GOODS_SERVICES
        else config.metro_dimension_count
    )

    terms: Dict[str, float] = {}
    for record in relations:
        key = normalise_text(record.dimension)
        if key not in known:
            issues.add(f"unknown {category.value} dimension {record.dimension!r}", record.line)
            continue
        if key in terms:
            issues.add(f"duplicate dimension {record.dimension!r} for pair {pair[0]}->{pair[1]}", record.line)
            continue
        if record.order not in (1, 2, 3):
            issues.add(f"order must be 1, 2 or 3, got {record.order!r}", record.line)
            continue
        terms[key] = config.discount(category, record.order)

    issues.raise_if_any("invalid relations")
    return math.fsum(sorted(terms.values())) / denominator


def distribute_to_municipalities(
    score: float,
    from_center: UrbanCenter,
    to_center: UrbanCenter,
    municipalities: Mapping[str, Municipality],
) -> List[Tuple[str, str, float]]:
    """Spread a center-to-center score over municipalities as ``(source, target, weight)``.

    Each target member receives the full score, split among the source members
    in proportion to their populations. A municipality never feeds itself.
    """
    issues = IssueCollector("centers")
    total = sum(municipalities[mid].population for mid in from_center.members)
    if total <= 0:
        issues.add(f"center {from_center.center_id!r} has zero total population")
        issues.raise_if_any("cannot distribute influence")

    edges: List[Tuple[str, str, float]] = []
    for target in sorted(to_center.members):
        for source in sorted(from_center.members):
            if source == target:
                continue
            share = municipalities[source].population / total
            edges.append((source, target, score * share))
    return edges


# Build ---------------------------------------------------------------
def build_graph(
    municipalities: Sequence[Municipality],
    centers: Sequence[UrbanCenter],
    relations: Sequence[RelationRecord],
    config: BuildConfig | None = None,
) -> InfluenceGraph:
    return build_graph_with_diagnostics(municipalities, centers, relations, config).graph


def build_graph_with_diagnostics(
    municipalities: Sequence[Municipality],
    centers: Sequence[UrbanCenter],
    relations: Sequence[RelationRecord],
    config: BuildConfig | None = None,
) -> GraphBuild:
    """Build the normalized influence graph and a report of what was dropped.

    Contributions landing on the same ``(source, target)`` pair are summed in a
    sorted order, so the result does not depend on the input row order.
    """
    config = config or BuildConfig()
    diagnostics = BuildDiagnostics()

    munis = _index_municipalities(municipalities)
    center_map = _index_centers(centers, munis, diagnostics)
    by_pair = _group_relations(relations, center_map)

    contributions: Dict[Tuple[str, str], List[float]] = defaultdict(list)
    issues = IssueCollector("relations")
    for pair in sorted(by_pair):
        records = by_pair[pair]
        try:
            score = center_influence_score(records, config)
        except ValidationError as exc:
            issues.issues.extend(exc.issues)
            continue
        if score <= 0.0:
            continue

        from_center, to_center = center_map[pair[0]], center_map[pair[1]]
        overlap = sorted(set(from_center.members) & set(to_center.members))
        for mid in overlap:
            diagnostics.dropped_self_loops.append((mid, mid))

        distributed = distribute_to_municipalities(score, from_center, to_center, munis)
        if not distributed:
            issues.add(
                f"relation {pair[0]}->{pair[1]} collapses onto municipality {overlap[0]!r} influencing itself",
                records[0].line,
            )
            continue
        for source, target, weight in distributed:
            contributions[(target, source)].append(weight)
    issues.raise_if_any("invalid relations")

    edges = [
        (target, source, math.fsum(sorted(weights)))
        for (target, source), weights in sorted(contributions.items())
    ]
    raw = InfluenceGraph.from_edges([m.id for m in municipalities], edges)
    graph = normalize(raw)

    diagnostics.n_vertices = graph.n_vertices
    diagnostics.n_edges = graph.n_edges
    diagnostics.isolated_vertices = list(graph.source_vertices)
    if not relations:
        diagnostics.warnings.append("no relations supplied; every vertex is isolated")
    if diagnostics.isolated_vertices:
        diagnostics.warnings.append(
            f"{len(diagnostics.isolated_vertices)} vertices have no predecessors and get no expectation"
        )

    _logger.info(
        "built influence graph vertices=%d edges=%d isolated=%d",
        diagnostics.n_vertices,
        diagnostics.n_edges,
        len(diagnostics.isolated_vertices),
    )
    return GraphBuild(graph=graph, diagnostics=diagnostics)


# Internal helpers ----------------------------------------------------
def _index_municipalities(municipalities: Iterable[Municipality]) -> Dict[str, Municipality]:
    issues = IssueCollector("municipalities")
    index: Dict[str, Municipality] = {}
    for muni in municipalities:
        if not muni.id:
            issues.add("empty municipality id")
        elif muni.id in index:
            issues.add(f"duplicate municipality id {muni.id!r}")
        elif muni.population < 1:
            issues.add(f"municipality {muni.id!r} has population {muni.population} (< 1)")
        else:
            index[muni.id] = muni
    issues.raise_if_any("invalid municipalities")
    return index


def _index_centers(
    centers: Iterable[UrbanCenter],
    munis: Mapping[str, Municipality],
    diagnostics: BuildDiagnostics,
) -> Dict[str, UrbanCenter]:
    issues = IssueCollector("centers")
    index: Dict[str, UrbanCenter] = {}
    owner: Dict[str, str] = {}
    for center in centers:
        if center.center_id in index:
            issues.add(f"duplicate center id {center.center_id!r}")
            continue
        if not center.members:
            issues.add(f"center {center.center_id!r} has no members")
            continue
        for mid in center.members:
            if mid not in munis:
                issues.add(f"center {center.center_id!r} references unknown municipality {mid!r}")
            elif mid in owner:
                diagnostics.warnings.append(
                    f"municipality {mid!r} belongs to both {owner[mid]!r} and {center.center_id!r}"
                )
            else:
                owner[mid] = center.center_id
        index[center.center_id] = center
    issues.raise_if_any("invalid centers")
    return index


def _group_relations(
    relations: Iterable[RelationRecord],
    centers: Mapping[str, UrbanCenter],
) -> Dict[Tuple[str, str], List[RelationRecord]]:
    issues = IssueCollector("relations")
    grouped: Dict[Tuple[str, str], List[RelationRecord]] = defaultdict(list)
    for record in relations:
        dangling = [cid for cid in record.pair if cid not in centers]
        if dangling:
            for cid in dangling:
                issues.add(
                    f"relation {record.from_center}->{record.to_center} references unknown center {cid!r}",
                    record.line,
                )
            continue
        if record.from_center == record.to_center:
            issues.add(f"center {record.from_center!r} cannot influence itself", record.line)
            continue
        grouped[record.pair].append(record)
    issues.raise_if_any("invalid relations")
    return grouped
