from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import List

import numpy as np
import pytest

from logic.complaints import ComplaintRecord, ComplaintStore, ConsumerCount
from logic.graph import InfluenceGraph, normalize
from logic.influence import build_graph

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def g3() -> InfluenceGraph:
    """A <-> B, A -> B (0.6), C -> B (0.4), A -> C."""
    return InfluenceGraph.from_edges(
        ["A", "B", "C"],
        [("A", "B", 1.0), ("B", "A", 0.6), ("B", "C", 0.4), ("C", "A", 1.0)],
        normalized=True,
    )


def random_normalized_graph(rng: np.random.Generator, n: int, density: float = 0.05) -> InfluenceGraph:
    """Random digraph without self-loops; roughly ``density`` of pairs connected."""
    edges = []
    per_vertex = max(1, int(density * n))
    for target in range(n):
        k = int(rng.integers(0, per_vertex + 1))
        if k == 0:
            continue
        sources = rng.choice(n - 1, size=min(k, n - 1), replace=False)
        for source in sources:
            source = int(source) + (1 if source >= target else 0)
            edges.append((f"v{target}", f"v{source}", float(rng.uniform(0.01, 5.0))))
    raw = InfluenceGraph.from_edges([f"v{i}" for i in range(n)], edges)
    return normalize(raw)


def flat_store(
    municipalities: List[str],
    operator: str = "A",
    start: dt.date = dt.date(2021, 1, 1),
    days: int = 59,
    rate_units: int = 2,
) -> ComplaintStore:
    """Every municipality at the same rate, ``rate_units`` complaints per 100,000 consumers a day."""
    months = sorted({(start + dt.timedelta(days=i)).strftime("%Y-%m") for i in range(days)})
    consumers = [ConsumerCount(mid, operator, month, 100_000) for mid in municipalities for month in months]
    complaints = [
        ComplaintRecord(mid, operator, start + dt.timedelta(days=i), rate_units)
        for mid in municipalities
        for i in range(days)
    ]
    return ComplaintStore.from_records(consumers, complaints)


def world_pipeline(world):
    """Graph and complaint store for a generated world, built through the library."""
    graph = build_graph(world.municipalities, world.centers, world.relations)
    store = ComplaintStore.from_records(world.consumers, world.complaints)
    return graph, store
