from __future__ import annotations

import datetime as dt
import math
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logic.complaints import ComplaintRecord, ComplaintStore, ConsumerCount
from logic.cusum import CusumConfig, cusum, cusum_block, discrepancy_history, history_traces, scan_all
from logic.errors import UsageError
from logic.graph import InfluenceGraph, normalize

START = dt.date(2021, 3, 1)
STEP = CusumConfig(target_mean=1.0, allowance=0.25, threshold=3.0)


def _days(values):
    return [(START + dt.timedelta(days=i), v) for i, v in enumerate(values)]


def _step_series(onset: int, length: int = 30, level: float = 2.0):
    return _days([1.0 if t < onset else level for t in range(length)])


def test_in_control_series_never_alarms():
    trace = cusum(_days([1.0] * 50), STEP)
    assert trace.alarm_dates == []
    assert all(p.statistic == 0.0 for p in trace.points)


def test_step_alarms_on_fourth_elevated_step():
    trace = cusum(_step_series(10), STEP)
    stats = [p.statistic for p in trace.points]
    assert stats[10:14] == [0.75, 1.5, 2.25, 3.0]
    assert trace.alarm_dates[0] == START + dt.timedelta(days=13)


def test_reset_after_alarm():
    trace = cusum(_step_series(10), STEP)
    assert trace.points[14].statistic == 0.75
    assert len(trace.alarm_dates) == 5  # steps 13, 17, 21, 25, 29

    held = cusum(_step_series(10), CusumConfig(1.0, 0.25, 3.0, reset_on_alarm=False))
    assert held.points[14].statistic == 3.75
    assert held.alarm_dates[0] == START + dt.timedelta(days=13)


def test_infinite_discrepancy_alarms_immediately():
    trace = cusum(_days([1.0, 1.0, math.inf, 1.0]), STEP)
    assert trace.alarm_dates == [START + dt.timedelta(days=2)]
    assert trace.points[3].statistic == 0.0


def test_missing_values_carry_the_statistic():
    trace = cusum(_days([2.0, float("nan"), None, 2.0]), STEP)
    stats = [p.statistic for p in trace.points]
    assert stats == [0.75, 0.75, 0.75, 1.5]
    assert not any(p.alarm for p in trace.points[1:3])


def test_accepts_pandas_series():
    series = pd.Series([1.0, 3.0, 3.0], index=pd.date_range(START, periods=3, freq="D"))
    trace = cusum(series, STEP)
    assert [p.date for p in trace.points] == [START, START + dt.timedelta(days=1), START + dt.timedelta(days=2)]
    assert trace.alarm_dates == [START + dt.timedelta(days=2)]


def test_config_validation():
    with pytest.raises(UsageError):
        CusumConfig(threshold=0.0)
    with pytest.raises(UsageError):
        CusumConfig(allowance=-1.0)


@settings(max_examples=1000, deadline=None)
@given(
    st.lists(
        st.floats(min_value=0.0, max_value=1.25, allow_nan=False, allow_infinity=False),
        min_size=1,
        max_size=120,
    )
)
def test_sub_threshold_series_never_alarm(values):
    trace = cusum(_days(values), STEP)
    assert trace.alarm_dates == []
    assert all(p.statistic == 0.0 for p in trace.points)


@settings(deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=10.0, allow_nan=False), min_size=1, max_size=60))
def test_statistic_is_non_negative_and_block_matches_scalar(values):
    trace = cusum(_days(values), STEP)
    assert all(p.statistic >= 0.0 for p in trace.points)
    stats, alarms = cusum_block(np.array([values, values[::-1]]).T, STEP)
    np.testing.assert_array_equal(stats[:, 0], trace.statistics)
    np.testing.assert_array_equal(cusum(_days(values[::-1]), STEP).statistics, stats[:, 1])


# Eighths keep every partial sum exact in binary floating point.
eighths = st.integers(min_value=0, max_value=8).map(lambda i: i / 8)


@settings(max_examples=300, deadline=None)
@given(
    allowance=eighths,
    excess=st.integers(min_value=1, max_value=16).map(lambda i: i / 8),
    threshold=st.integers(min_value=1, max_value=40).map(lambda i: i / 4),
    onset=st.integers(min_value=0, max_value=10),
)
def test_persistent_shift_alarms_after_the_bounded_delay(allowance, excess, threshold, onset):
    shift = allowance + excess
    config = CusumConfig(target_mean=1.0, allowance=allowance, threshold=threshold)
    trace = cusum(_step_series(onset, length=onset + 120, level=1.0 + shift), config)

    delay = math.ceil(Fraction(threshold) / (Fraction(shift) - Fraction(allowance)))
    first = trace.alarm_dates[0]
    assert first == START + dt.timedelta(days=onset + delay - 1)


@settings(max_examples=300, deadline=None)
@given(
    values=st.lists(st.integers(min_value=0, max_value=32).map(lambda i: i / 8), min_size=1, max_size=80),
    offset=st.integers(min_value=-8, max_value=64).map(lambda i: i / 8),
    reset=st.booleans(),
)
def test_shifting_data_and_target_together_leaves_the_trace_unchanged(values, offset, reset):
    base = CusumConfig(target_mean=1.0, allowance=0.25, threshold=3.0, reset_on_alarm=reset)
    moved = CusumConfig(target_mean=1.0 + offset, allowance=0.25, threshold=3.0, reset_on_alarm=reset)
    original = cusum(_days(values), base)
    translated = cusum(_days([v + offset for v in values]), moved)
    assert translated.statistics.tolist() == original.statistics.tolist()
    assert translated.alarm_dates == original.alarm_dates


# scan_all ------------------------------------------------------------
def test_scan_all_reports_only_the_stepping_key():
    history = {(f"m{i}", "A"): _days([1.0] * 30) for i in range(10)}
    history[("m4", "A")] = _step_series(12)
    alarms = scan_all(history, STEP)
    assert [(a.municipality, a.operator) for a in alarms] == [("m4", "A")]
    assert alarms[0].first_alarm == START + dt.timedelta(days=15)


def test_scan_all_sorts_by_first_alarm():
    history = {
        ("a", "A"): _step_series(20),
        ("z", "A"): _step_series(5),
        ("b", "B"): _days([1.0] * 30),
    }
    alarms = scan_all(history, STEP)
    assert [a.municipality for a in alarms] == ["z", "a"]


def test_scan_all_empty_for_flat_history():
    assert scan_all({("a", "A"): _days([1.0] * 40)}, STEP) == []


# History over ingested data ------------------------------------------
@pytest.fixture
def step_world():
    """Town ``t`` doubles its complaint rate on 15 February; ``h`` feeds it."""
    graph = normalize(InfluenceGraph.from_edges(["h", "t"], [("t", "h", 1.0), ("h", "t", 1.0)]))
    start = dt.date(2021, 1, 1)
    consumers = [ConsumerCount(mid, "A", m, 100_000) for mid in ("h", "t") for m in ("2021-01", "2021-02", "2021-03")]
    complaints = []
    for i in range(90):
        day = start + dt.timedelta(days=i)
        complaints.append(ComplaintRecord("h", "A", day, 10))
        complaints.append(ComplaintRecord("t", "A", day, 20 if day >= dt.date(2021, 2, 15) else 10))
    return graph, ComplaintStore.from_records(consumers, complaints)


def test_discrepancy_history_matches_store(step_world):
    graph, store = step_world
    history = discrepancy_history(graph, store)
    assert history.dates[0] == store.first_computable_date()
    assert history.keys == (("h", "A"), ("t", "A"))
    series = dict(history.series("t", "A"))
    assert series[dt.date(2021, 2, 14)] == pytest.approx(1.0, abs=1e-12)
    # one doubled day in the window: (20 + 27 * 10) / 28 over 10
    assert series[dt.date(2021, 2, 15)] == pytest.approx(29 / 28, abs=1e-12)


def test_history_scan_flags_the_town(step_world):
    graph, store = step_world
    history = discrepancy_history(graph, store)
    alarms = scan_all(history, STEP)
    assert ("t", "A") in [(a.municipality, a.operator) for a in alarms]
    assert all(a.first_alarm >= dt.date(2021, 2, 15) for a in alarms)
    town = next(a for a in alarms if a.municipality == "t")
    traces = history_traces(history, STEP, [("t", "A")])
    assert traces[("t", "A")].alarm_dates == list(town.alarm_dates)
