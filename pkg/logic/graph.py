from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from logic.errors import ContractError, DomainError, IssueCollector

# Signals are float64 arrays: NaN is MISSING / UNDEFINED, +inf the infinite discrepancy.
MISSING = math.nan
UNDEFINED = math.nan
INF_DISCREPANCY = math.inf

NORMALIZATION_TOLERANCE = 1e-12

Edge = Tuple[str, str, float]


@dataclass(frozen=True, eq=False)
class InfluenceGraph:
    """Immutable weighted digraph over administrative units.

    Row ``i`` of ``adjacency`` holds the incoming weights of vertex ``i``:
    ``adjacency[i, j]`` is the influence of source ``j`` on target ``i``.
    Build instances through :meth:`from_edges` or :func:`normalize`.
    """

    vertices: Tuple[str, ...]
    adjacency: sp.csr_matrix
    normalized: bool = False
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {vid: i for i, vid in enumerate(self.vertices)})
        for array in (self.adjacency.data, self.adjacency.indices, self.adjacency.indptr):
            array.flags.writeable = False

    @classmethod
    def from_edges(
        cls,
        vertices: Iterable[str],
        edges: Iterable[Edge],
        *,
        normalized: bool = False,
    ) -> "InfluenceGraph":
        """Validate and assemble a graph from ``(target, source, weight)`` triples.

        Zero weights mean "no edge" and are skipped. With ``normalized=True``
        the incoming weights of every vertex with predecessors must already
        sum to one.
        """
        issues = IssueCollector("graph")
        order = tuple(vertices)
        index: Dict[str, int] = {}
        for vid in order:
            if not isinstance(vid, str) or not vid:
                issues.add(f"vertex id must be a non-empty string, got {vid!r}")
            elif vid in index:
                issues.add(f"duplicate vertex id {vid!r}")
            else:
                index[vid] = len(index)

        rows: List[int] = []
        cols: List[int] = []
        data: List[float] = []
        seen: set[tuple[int, int]] = set()
        for target, source, weight in edges:
            weight = float(weight)
            if target not in index or source not in index:
                missing = target if target not in index else source
                issues.add(f"edge {source}->{target} references unknown vertex {missing!r}")
                continue
            if target == source:
                issues.add(f"self-loop on {target!r}")
                continue
            if not math.isfinite(weight) or weight < 0.0:
                issues.add(f"edge {source}->{target} has invalid weight {weight!r}")
                continue
            if weight == 0.0:
                continue
            key = (index[target], index[source])
            if key in seen:
                issues.add(f"duplicate edge {source}->{target}")
                continue
            seen.add(key)
            rows.append(key[0])
            cols.append(key[1])
            data.append(weight)

        issues.raise_if_any("invalid graph")

        n = len(order)
        adjacency = sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n, n),
        )
        adjacency.sort_indices()
        graph = cls(order, adjacency, normalized=False)

        if normalized:
            degrees = graph.in_degrees()
            bad = [
                order[i]
                for i in np.flatnonzero((degrees > 0) & (np.abs(degrees - 1.0) > NORMALIZATION_TOLERANCE))
            ]
            for vid in bad:
                issues.add(f"incoming weights of {vid!r} do not sum to 1")
            issues.raise_if_any("graph is not normalized")
            graph = cls(order, adjacency, normalized=True)

        return graph

    # Lookups -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    def index_of(self, vertex: str) -> int:
        try:
            return self._index[vertex]
        except KeyError:
            raise DomainError(f"unknown vertex {vertex!r}") from None

    def __contains__(self, vertex: object) -> bool:
        return vertex in self._index

    def in_degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1), dtype=np.float64).ravel()

    def predecessors(self, vertex: str) -> Dict[str, float]:
        row = self.index_of(vertex)
        start, stop = self.adjacency.indptr[row], self.adjacency.indptr[row + 1]
        return {
            self.vertices[col]: float(weight)
            for col, weight in zip(self.adjacency.indices[start:stop], self.adjacency.data[start:stop])
        }

    @property
    def source_vertices(self) -> Tuple[str, ...]:
        """Vertices without predecessors; they get no expectation."""
        counts = np.diff(self.adjacency.indptr)
        return tuple(self.vertices[i] for i in np.flatnonzero(counts == 0))

    def edges(self) -> Iterator[Edge]:
        """Yield ``(target, source, weight)`` in vertex order, then source order."""
        coo = self.adjacency.tocoo()
        for row, col, weight in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            yield self.vertices[row], self.vertices[col], weight

    def to_dense(self) -> np.ndarray:
        return self.adjacency.toarray()


@dataclass(frozen=True, eq=False)
class GraphSignal:
    """One value per graph vertex, NaN marking MISSING entries."""

    vertices: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != (len(self.vertices),):
            raise DomainError(
                f"signal has shape {values.shape}, expected ({len(self.vertices)},)"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def observed(cls, graph: InfluenceGraph, values: Sequence[float] | np.ndarray) -> "GraphSignal":
        """Wrap measured data; non-missing entries must be finite and non-negative."""
        signal = cls(graph.vertices, np.asarray(values, dtype=np.float64))
        present = ~np.isnan(signal.values)
        bad = present & (~np.isfinite(signal.values) | (signal.values < 0.0))
        if bad.any():
            first = graph.vertices[int(np.flatnonzero(bad)[0])]
            raise DomainError(f"signal value at {first!r} must be finite and non-negative")
        return signal

    @cached_property
    def _index(self) -> Dict[str, int]:
        return {vid: i for i, vid in enumerate(self.vertices)}

    def __getitem__(self, vertex: str) -> float:
        try:
            return float(self.values[self._index[vertex]])
        except KeyError:
            raise DomainError(f"unknown vertex {vertex!r}") from None

    def is_missing(self, vertex: str) -> bool:
        return math.isnan(self[vertex])

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.vertices, self.values.tolist()))

    def scaled(self, alpha: float) -> "GraphSignal":
        return GraphSignal(self.vertices, self.values * float(alpha))


def signal_from_mapping(graph: InfluenceGraph, values: Mapping[str, float | None]) -> GraphSignal:
    """Build a signal from a partial mapping; absent or ``None`` entries are MISSING."""
    for vertex in values:
        graph.index_of(vertex)
    array = np.full(graph.n_vertices, np.nan)
    for vertex, value in values.items():
        if value is not None:
            array[graph.index_of(vertex)] = float(value)
    return GraphSignal.observed(graph, array)


@dataclass(frozen=True)
class DiscrepancyValue:
    """Observed over expected at one vertex (or one group of vertices).

    ``value`` is ``inf`` for INF_DISCREPANCY and NaN for UNDEFINED.
    """

    value: float
    observed: float
    expected: float

    @classmethod
    def of(cls, observed: float, expected: float) -> "DiscrepancyValue":
        ratio = float(_ratio(np.asarray([observed], dtype=np.float64), np.asarray([expected], dtype=np.float64))[0])
        return cls(ratio, float(observed), float(expected))

    @property
    def is_undefined(self) -> bool:
        return math.isnan(self.value)

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)

    def __float__(self) -> float:
        return self.value


class DiscrepancyField(Mapping):
    """Vertex discrepancies for one signal, readable as a mapping or as arrays."""

    def __init__(self, vertices: Tuple[str, ...], observed: np.ndarray, expected: np.ndarray) -> None:
        self.vertices = vertices
        self.observed = observed
        self.expected = expected
        self.values = _ratio(observed, expected)
        self._index = {vid: i for i, vid in enumerate(vertices)}

    def __getitem__(self, vertex: str) -> DiscrepancyValue:
        i = self._index[vertex]
        return DiscrepancyValue(float(self.values[i]), float(self.observed[i]), float(self.expected[i]))

    def __iter__(self) -> Iterator[str]:
        return iter(self.vertices)

    def __len__(self) -> int:
        return len(self.vertices)


# Operators -----------------------------------------------------------
def in_degree(graph: InfluenceGraph, vertex: str) -> float:
    row = graph.index_of(vertex)
    start, stop = graph.adjacency.indptr[row], graph.adjacency.indptr[row + 1]
    return math.fsum(graph.adjacency.data[start:stop].tolist())


def normalize(graph: InfluenceGraph) -> InfluenceGraph:
    """Divide every incoming weight by its vertex's in-degree.

    Vertices with in-degree zero keep no edges and become source vertices.
    """
    adjacency = graph.adjacency.copy()
    degrees = np.asarray(adjacency.sum(axis=1), dtype=np.float64).ravel()
    row_of = np.repeat(np.arange(graph.n_vertices), np.diff(adjacency.indptr))
    adjacency.data = adjacency.data / degrees[row_of]
    return InfluenceGraph(graph.vertices, adjacency, normalized=True)


def laplacian_matrix(graph: InfluenceGraph) -> sp.csr_matrix:
    """Sparse ``G - W`` with ``G`` the diagonal in-degree matrix."""
    return (sp.diags(graph.in_degrees()) - graph.adjacency).tocsr()


def predict(graph: InfluenceGraph, x: GraphSignal) -> GraphSignal:
    """Expected value of every vertex from its predecessors, ``y = Wx``.

    Predecessors with a MISSING signal are dropped and the remaining weights
    renormalised; vertices left without usable predecessors get MISSING.
    """
    _check_operands(graph, x)
    return GraphSignal(graph.vertices, expected_values(graph, x.values))


def laplacian_transform(graph: InfluenceGraph, x: GraphSignal) -> GraphSignal:
    """``[Lx]_i = x_i - y_i``; MISSING on either side propagates."""
    y = predict(graph, x)
    return GraphSignal(graph.vertices, x.values - y.values)


def discrepancy(graph: InfluenceGraph, x: GraphSignal) -> DiscrepancyField:
    y = predict(graph, x)
    return DiscrepancyField(graph.vertices, x.values, y.values)


def discrepancy_matrix(graph: InfluenceGraph, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Discrepancy for a block of signals laid out as (vertices x samples).

    Returns ``(discrepancies, expectations)`` with the same shape as ``values``.
    """
    _require_normalized(graph)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != graph.n_vertices:
        raise DomainError(f"signal block must have {graph.n_vertices} rows, got shape {values.shape}")
    expected = expected_values(graph, values)
    return _ratio(values, expected), expected


def discrepancy_identity_check(graph: InfluenceGraph, x: GraphSignal) -> float:
    """Largest ``|d_i - ([Lx]_i / y_i + 1)|`` over fully observed vertices with ``y_i > 0``.

    The Laplacian side is computed with the explicit ``G - W`` matrix, not
    from the predictor, so the two sides are independent.
    """
    _check_operands(graph, x)
    missing = np.isnan(x.values)
    expected = expected_values(graph, x.values)
    d = _ratio(x.values, expected)

    lx = laplacian_matrix(graph) @ np.where(missing, 0.0, x.values)
    touches_missing = (graph.adjacency @ missing.astype(np.float64)) > 0.0
    usable = ~missing & ~touches_missing & ~np.isnan(expected) & (expected > 0.0)
    if not usable.any():
        return 0.0

    residual = np.abs(d[usable] - (lx[usable] / expected[usable] + 1.0))
    return float(residual.max())


def group_discrepancy(
    graph: InfluenceGraph,
    x: GraphSignal,
    group: Iterable[str],
    *,
    weights: Mapping[str, float] | None = None,
) -> DiscrepancyValue:
    """Discrepancy of a set of vertices.

    By default the ratio of summed observations to summed expectations over
    members where both are defined. With ``weights`` (e.g. populations) the
    weighted mean of member discrepancies is returned instead, reported as
    ``observed=mean, expected=1``.
    """
    members = list(dict.fromkeys(group))
    if not members:
        raise DomainError("group must not be empty")
    rows = np.asarray([graph.index_of(vid) for vid in members], dtype=np.int64)

    y = predict(graph, x).values[rows]
    observed = x.values[rows]
    defined = ~np.isnan(observed) & ~np.isnan(y)
    if not defined.any():
        return DiscrepancyValue(UNDEFINED, MISSING, MISSING)

    if weights is None:
        numerator = math.fsum(observed[defined].tolist())
        denominator = math.fsum(y[defined].tolist())
        return DiscrepancyValue.of(numerator, denominator)

    member_d = _ratio(observed[defined], y[defined])
    member_w = np.asarray([float(weights[vid]) for vid, ok in zip(members, defined) if ok])
    if np.isinf(member_d).any():
        return DiscrepancyValue(INF_DISCREPANCY, INF_DISCREPANCY, 1.0)
    total = math.fsum(member_w.tolist())
    if total <= 0.0:
        raise DomainError("group weights must have a positive sum")
    mean = math.fsum((member_w * member_d).tolist()) / total
    return DiscrepancyValue(mean, mean, 1.0)


# Internal helpers ----------------------------------------------------
def expected_values(graph: InfluenceGraph, values: np.ndarray) -> np.ndarray:
    """Renormalised predecessor average for a 1-D signal or a 2-D block."""
    present = ~np.isnan(values)
    numerator = graph.adjacency @ np.where(present, values, 0.0)
    mass = graph.adjacency @ present.astype(np.float64)
    expected = np.full(np.shape(values), np.nan)
    usable = mass > 0.0
    expected[usable] = numerator[usable] / mass[usable]
    return expected


def _ratio(observed: np.ndarray, expected: np.ndarray) -> np.ndarray:
    out = np.full(np.shape(observed), np.nan)
    defined = ~np.isnan(observed) & ~np.isnan(expected)
    positive = defined & (expected > 0.0)
    out[positive] = observed[positive] / expected[positive]
    zero = defined & (expected == 0.0)
    out[zero & (observed == 0.0)] = 1.0
    out[zero & (observed > 0.0)] = INF_DISCREPANCY
    return out


def _require_normalized(graph: InfluenceGraph) -> None:
    if not graph.normalized:
        raise ContractError("operator requires a normalized graph; call normalize() first")


def _check_operands(graph: InfluenceGraph, x: GraphSignal) -> None:
    _require_normalized(graph)
    if x.vertices is not graph.vertices and x.vertices != graph.vertices:
        raise DomainError("signal is not defined on this graph's vertices")
