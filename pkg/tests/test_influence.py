from __future__ import annotations

import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interfaces.inputs import read_centers, read_municipalities, read_relations
from logic.errors import UsageError, ValidationError
from logic.graph import in_degree
from logic.influence import (
    GOODS_SERVICES_AREAS,
    METRO_THEMES,
    BuildConfig,
    Municipality,
    RelationCategory as Cat,
    RelationRecord,
    UrbanCenter,
    build_graph,
    build_graph_with_diagnostics,
    center_influence_score,
    distribute_to_municipalities,
    normalise_text,
)


def _goods(area: str, order: int, pair=("C1", "C2"), line=None) -> RelationRecord:
    return RelationRecord(pair[0], pair[1], Cat.GOODS_SERVICES, area, order, line)


def _metro(theme: str, order: int, pair=("C1", "C2")) -> RelationRecord:
    return RelationRecord(pair[0], pair[1], Cat.METRO_LINK, theme, order)


# Scores --------------------------------------------------------------
def test_single_area_scores_one_tenth():
    assert center_influence_score([_goods("higher education", 1)]) == pytest.approx(0.1, abs=1e-15)


def test_all_areas_first_order_score_one():
    assert center_influence_score([_goods(a, 1) for a in GOODS_SERVICES_AREAS]) == pytest.approx(1.0, abs=1e-15)


def test_metro_discount_average():
    relations = [_metro(METRO_THEMES[0], 1), _metro(METRO_THEMES[1], 1), _metro(METRO_THEMES[2], 2), _metro(METRO_THEMES[3], 3)]
    assert center_influence_score(relations) == pytest.approx((1 + 1 + 0.5 + 1 / 3) / 4, abs=1e-15)


def test_full_link_scores_one_and_empty_scores_zero():
    assert center_influence_score([RelationRecord("C1", "C2", Cat.FULL_LINK)]) == 1.0
    assert center_influence_score([]) == 0.0


def test_dimension_names_are_normalised():
    assert normalise_text("  Low- and Medium-Complexity   HEALTHCARE ") == "low and medium complexity healthcare"
    assert center_influence_score([_goods("Higher-Education", 2)]) == pytest.approx(0.095, abs=1e-15)


def test_score_validation_reports_lines():
    with pytest.raises(ValidationError) as err:
        center_influence_score([_goods("astrology", 1, line=4), _goods("airport", 5, line=5)])
    lines = sorted(issue.line for issue in err.value.issues)
    assert lines == [4, 5]

    with pytest.raises(ValidationError, match="mixed"):
        center_influence_score([_goods("airport", 1), _metro("airway links", 1)])

    with pytest.raises(ValidationError):
        center_influence_score([_goods("airport", 1), _goods("Airport", 2)])


def test_score_is_monotone_in_order():
    scores = [center_influence_score([_goods("airport", order)]) for order in (1, 2, 3)]
    assert scores == sorted(scores, reverse=True)


def test_build_config_rejects_increasing_discounts():
    with pytest.raises(UsageError):
        BuildConfig(goods_services_discounts=(0.9, 1.0, 0.8))


# Distribution --------------------------------------------------------
def test_population_split():
    munis = {
        "m1": Municipality("m1", "", 300_000),
        "m2": Municipality("m2", "", 100_000),
        "m3": Municipality("m3", "", 50_000),
    }
    edges = distribute_to_municipalities(0.1, UrbanCenter("C1", ("m1", "m2")), UrbanCenter("C2", ("m3",)), munis)
    as_map = {(s, t): w for s, t, w in edges}
    assert as_map[("m1", "m3")] == pytest.approx(0.075, abs=1e-15)
    assert as_map[("m2", "m3")] == pytest.approx(0.025, abs=1e-15)


def test_single_member_centers_give_one_edge():
    munis = {"a": Municipality("a", "", 10), "b": Municipality("b", "", 20)}
    assert distribute_to_municipalities(0.3, UrbanCenter("A", ("a",)), UrbanCenter("B", ("b",)), munis) == [("a", "b", 0.3)]


def test_overlapping_centers_skip_self_loops():
    munis = {mid: Municipality(mid, "", 100) for mid in ("m1", "m2", "m3")}
    edges = distribute_to_municipalities(1.0, UrbanCenter("A", ("m1", "m2")), UrbanCenter("B", ("m1", "m3")), munis)
    assert {(s, t) for s, t, _ in edges} == {("m2", "m1"), ("m1", "m3"), ("m2", "m3")}


# Build ---------------------------------------------------------------
def _fixture_world(fixtures_dir):
    base = fixtures_dir / "build"
    return (
        read_municipalities(base / "municipalities.csv"),
        read_centers(base / "centers.csv"),
        read_relations(base / "relations.csv"),
    )


def test_fixture_build_matches_hand_computed_edges(fixtures_dir):
    munis, centers, relations = _fixture_world(fixtures_dir)
    result = build_graph_with_diagnostics(munis, centers, relations)
    expected = pd.read_csv(fixtures_dir / "build" / "expected_edges.csv")

    got = list(result.graph.edges())
    assert [(t, s) for t, s, _ in got] == list(zip(expected["target_id"], expected["source_id"]))
    for (_, _, weight), want in zip(got, expected["weight"]):
        assert weight == pytest.approx(want, abs=1e-12)

    assert result.diagnostics.isolated_vertices == ["m4"]
    assert result.diagnostics.n_edges == 4


def test_build_is_normalized_and_free_of_self_loops(fixtures_dir):
    munis, centers, relations = _fixture_world(fixtures_dir)
    graph = build_graph(munis, centers, relations)
    assert graph.normalized
    for vid in graph.vertices:
        if graph.predecessors(vid):
            assert in_degree(graph, vid) == pytest.approx(1.0, abs=1e-12)
        assert vid not in graph.predecessors(vid)


def test_build_with_empty_relations(fixtures_dir):
    munis, centers, _ = _fixture_world(fixtures_dir)
    result = build_graph_with_diagnostics(munis, centers, [])
    assert result.graph.n_edges == 0
    assert len(result.diagnostics.isolated_vertices) == 4
    assert any("no relations" in w for w in result.diagnostics.warnings)


def test_contributions_to_same_edge_are_summed():
    munis = [Municipality("a", "", 100), Municipality("b", "", 100), Municipality("c", "", 100)]
    centers = [UrbanCenter("A", ("a",)), UrbanCenter("AB", ("b",)), UrbanCenter("CX", ("c",)), UrbanCenter("AX", ("a", "b"))]
    relations = [
        _goods("airport", 1, pair=("A", "CX")),
        _goods("airport", 1, pair=("AX", "CX")),
        _goods("newspapers", 1, pair=("AB", "CX")),
    ]
    graph = build_graph(munis, centers, relations)
    # a -> c: 0.1 + 0.05; b -> c: 0.05 + 0.1
    weights = graph.predecessors("c")
    assert weights["a"] == pytest.approx(0.5, abs=1e-12)
    assert weights["b"] == pytest.approx(0.5, abs=1e-12)


def test_build_is_order_independent(fixtures_dir):
    munis, centers, relations = _fixture_world(fixtures_dir)
    forward = build_graph(munis, centers, relations)
    backward = build_graph(list(reversed(munis)), list(reversed(centers)), list(reversed(relations)))
    assert sorted(forward.edges()) == sorted(backward.edges())


def test_inputs_saved_with_a_byte_order_mark(fixtures_dir, tmp_path):
    base = fixtures_dir / "build"
    for name in ("municipalities.csv", "centers.csv", "relations.csv"):
        (tmp_path / name).write_bytes(b"\xef\xbb\xbf" + (base / name).read_bytes())
    assert read_municipalities(tmp_path / "municipalities.csv") == read_municipalities(base / "municipalities.csv")
    assert read_centers(tmp_path / "centers.csv") == read_centers(base / "centers.csv")
    assert read_relations(tmp_path / "relations.csv") == read_relations(base / "relations.csv")


def _scaled_config(factor: float) -> BuildConfig:
    base = BuildConfig()
    return BuildConfig(
        goods_services_discounts=tuple(d * factor for d in base.goods_services_discounts),
        metro_discounts=tuple(d * factor for d in base.metro_discounts),
    )


def _assert_same_graph(left, right):
    assert [(t, s) for t, s, _ in left.edges()] == [(t, s) for t, s, _ in right.edges()]
    for (_, _, a), (_, _, b) in zip(left.edges(), right.edges()):
        assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("factor", [0.9, 0.5, 0.125, 0.01])
def test_common_discount_factor_leaves_fixture_graph_unchanged(fixtures_dir, factor):
    munis, centers, relations = _fixture_world(fixtures_dir)
    _assert_same_graph(build_graph(munis, centers, relations, _scaled_config(factor)), build_graph(munis, centers, relations))


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.0, allow_nan=False))
def test_common_discount_factor_leaves_mixed_graph_unchanged(factor):
    munis = [Municipality(mid, "", pop) for mid, pop in (("a", 100), ("b", 300), ("c", 50), ("d", 80))]
    centers = [UrbanCenter("A", ("a", "b")), UrbanCenter("C", ("c",)), UrbanCenter("D", ("d",))]
    relations = [
        _goods("airport", 1, pair=("A", "C")),
        _goods("newspapers", 3, pair=("A", "C")),
        _metro(METRO_THEMES[0], 2, pair=("D", "C")),
        _metro(METRO_THEMES[0], 1, pair=("C", "D")),
        _metro(METRO_THEMES[3], 3, pair=("C", "D")),
        _goods("higher education", 2, pair=("C", "A")),
    ]
    _assert_same_graph(build_graph(munis, centers, relations, _scaled_config(factor)), build_graph(munis, centers, relations))


def test_dangling_center_reference_is_reported(fixtures_dir):
    munis, centers, _ = _fixture_world(fixtures_dir)
    relations = read_relations(fixtures_dir / "build" / "dangling_relations.csv")
    with pytest.raises(ValidationError) as err:
        build_graph(munis, centers, relations)
    issue = err.value.issues[0]
    assert "C9" in issue.reason
    assert issue.line == 3


def test_unknown_member_and_self_relation_are_errors():
    munis = [Municipality("a", "", 1)]
    with pytest.raises(ValidationError):
        build_graph(munis, [UrbanCenter("A", ("a", "zz"))], [])
    with pytest.raises(ValidationError):
        build_graph(munis, [UrbanCenter("A", ("a",))], [RelationRecord("A", "A", Cat.FULL_LINK)])


def test_overlapping_membership_is_a_warning():
    munis = [Municipality("a", "", 1), Municipality("b", "", 1)]
    centers = [UrbanCenter("A", ("a", "b")), UrbanCenter("B", ("b",))]
    result = build_graph_with_diagnostics(munis, centers, [RelationRecord("A", "B", Cat.FULL_LINK)])
    assert any("belongs to both" in w for w in result.diagnostics.warnings)
    assert result.diagnostics.dropped_self_loops == [("b", "b")]
    assert result.graph.predecessors("b") == {"a": pytest.approx(1.0)}


def test_relation_collapsing_onto_itself_is_an_error():
    munis = [Municipality("a", "", 1)]
    centers = [UrbanCenter("A", ("a",)), UrbanCenter("B", ("a",))]
    with pytest.raises(ValidationError, match="invalid relations"):
        build_graph(munis, centers, [RelationRecord("A", "B", Cat.FULL_LINK)])
