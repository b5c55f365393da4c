from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

from interfaces.inputs import load_store, read_centers, read_edge_list, read_municipalities, read_relations
from interfaces.outputs import edge_list_text, report_payload
from logic.influence import build_graph
from logic.ranking import divergence_summary, month_end_report
from ui.main import main

BUILD = Path(__file__).resolve().parent / "fixtures" / "build"


def _build_args(out: Path, relations: str = "relations.csv"):
    return [
        "build-graph",
        "--municipalities",
        str(BUILD / "municipalities.csv"),
        "--centers",
        str(BUILD / "centers.csv"),
        "--relations",
        str(BUILD / relations),
        "--out",
        str(out),
    ]


def _simulate(out: Path, *extra: str) -> Path:
    assert main(["simulate", "--out", str(out), *extra]) == 0
    return out / "config.yaml"


# build-graph -----------------------------------------------------------
def test_build_graph_writes_expected_edges(tmp_path, capsys):
    assert main(_build_args(tmp_path)) == 0
    captured = capsys.readouterr()
    assert "vertices=4 edges=4" in captured.out
    assert captured.err == ""

    written = pd.read_csv(tmp_path / "graph.csv")
    expected = pd.read_csv(BUILD / "expected_edges.csv")
    assert list(written.columns) == ["target_id", "source_id", "weight"]
    pd.testing.assert_frame_equal(written, expected, check_exact=False, atol=1e-12, check_dtype=False)

    diagnostics = json.loads((tmp_path / "diagnostics.json").read_text(encoding="utf-8"))
    assert diagnostics["isolated_vertex_ids"] == ["m4"]


def test_build_graph_without_relations_warns(tmp_path):
    assert main(_build_args(tmp_path, "empty_relations.csv")) == 0
    diagnostics = json.loads((tmp_path / "diagnostics.json").read_text(encoding="utf-8"))
    assert diagnostics["edges"] == 0
    assert any("no relations" in w for w in diagnostics["warnings"])
    assert (tmp_path / "graph.csv").read_text(encoding="utf-8") == "target_id,source_id,weight\n"


def test_dangling_relation_exits_with_validation_error(tmp_path, capsys):
    assert main(_build_args(tmp_path, "dangling_relations.csv")) == 2
    err = capsys.readouterr().err.splitlines()
    assert err[0].startswith("error code=2 kind=validation")
    assert any(line.startswith("issue ") and "line=3" in line and "C9" in line for line in err[1:])
    assert not (tmp_path / "graph.csv").exists()


def test_missing_input_file_is_an_io_error(tmp_path, capsys):
    args = _build_args(tmp_path)
    args[args.index("--centers") + 1] = str(tmp_path / "nowhere.csv")
    assert main(args) == 1
    assert capsys.readouterr().err.startswith("error code=1 kind=io")


def test_missing_output_directory_is_a_usage_error(capsys):
    args = _build_args(Path("unused"))[:-2]
    assert main(args) == 3
    assert "kind=usage" in capsys.readouterr().err


def test_edge_list_round_trips_bit_exactly(tmp_path):
    config_path = _simulate(tmp_path, "--kind", "regional_anomaly")
    assert main(["build-graph", "--config", str(config_path), "--out", str(tmp_path / "g")]) == 0
    written = (tmp_path / "g" / "graph.csv").read_bytes()

    munis = read_municipalities(tmp_path / "municipalities.csv")
    parsed = read_edge_list(tmp_path / "g" / "graph.csv", [m.id for m in munis])
    assert edge_list_text(parsed).encode("utf-8") == written

    built = build_graph(munis, read_centers(tmp_path / "centers.csv"), read_relations(tmp_path / "relations.csv"))
    assert list(parsed.edges()) == list(built.edges())


# simulate --------------------------------------------------------------
def test_simulate_is_byte_deterministic(tmp_path):
    _simulate(tmp_path / "a", "--kind", "local_anomaly", "--seed", "7")
    _simulate(tmp_path / "b", "--kind", "local_anomaly", "--seed", "7")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == [
        "centers.csv",
        "complaints.csv",
        "config.yaml",
        "consumers.csv",
        "municipalities.csv",
        "relations.csv",
        "scenario.json",
    ]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_writes_a_runnable_config(tmp_path):
    config_path = _simulate(tmp_path, "--kind", "regional_anomaly", "--region", "1")
    config = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    assert config["inputs"]["municipalities"] == "municipalities.csv"
    assert config["output_dir"] == "reports"
    assert config["simulate"]["kind"] == "regional_anomaly"
    assert config["simulate"]["onset"] == "2021-03-02"
    scenario = json.loads((tmp_path / "scenario.json").read_text(encoding="utf-8"))
    assert scenario["origin"] == ["H01"]


def test_unknown_scenario_kind(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--kind", "meteor"]) == 3
    assert "scenario kind must be one of" in capsys.readouterr().err


# rank ------------------------------------------------------------------
def test_rank_matches_library_call(tmp_path, capsys):
    config_path = _simulate(tmp_path, "--kind", "local_anomaly", "--seed", "3")
    capsys.readouterr()
    assert main(["rank", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "tie-break:" in out

    payload = json.loads((tmp_path / "reports" / "report-2021-04-30.json").read_text(encoding="utf-8"))
    assert (tmp_path / "reports" / "report-2021-04-30.csv").is_file()

    munis = read_municipalities(tmp_path / "municipalities.csv")
    graph = build_graph(munis, read_centers(tmp_path / "centers.csv"), read_relations(tmp_path / "relations.csv"))
    store = load_store(tmp_path / "consumers.csv", tmp_path / "complaints.csv")
    report = month_end_report(graph, store, munis, operators=["A", "B"])
    assert payload == report_payload(report, munis, divergence_summary(report))

    towns = next(s for s in payload["sections"] if s["stratum"] == "200k_to_500k")
    assert (towns["entries"][0]["municipality_id"], towns["entries"][0]["operator"]) == ("T0000", "A")


def test_rank_is_deterministic(tmp_path):
    config_path = _simulate(tmp_path, "--kind", "regional_anomaly", "--noise", "0.2")
    for name in ("one", "two"):
        assert main(["rank", "--config", str(config_path), "--out", str(tmp_path / name), "--k", "3"]) == 0
    for suffix in ("json", "csv"):
        one = (tmp_path / "one" / f"report-2021-04-30.{suffix}").read_bytes()
        two = (tmp_path / "two" / f"report-2021-04-30.{suffix}").read_bytes()
        assert one == two


def test_rank_from_edge_list(tmp_path):
    config_path = _simulate(tmp_path, "--kind", "local_anomaly")
    assert main(["build-graph", "--config", str(config_path), "--out", str(tmp_path / "g")]) == 0
    assert main(["rank", "--config", str(config_path), "--out", str(tmp_path / "built")]) == 0
    assert (
        main(["rank", "--config", str(config_path), "--graph", str(tmp_path / "g" / "graph.csv"), "--out", str(tmp_path / "read")])
        == 0
    )
    built = json.loads((tmp_path / "built" / "report-2021-04-30.json").read_text(encoding="utf-8"))
    read = json.loads((tmp_path / "read" / "report-2021-04-30.json").read_text(encoding="utf-8"))
    assert [e["municipality_id"] for s in built["sections"] for e in s["entries"]] == [
        e["municipality_id"] for s in read["sections"] for e in s["entries"]
    ]


def test_rank_over_a_month_range(tmp_path, capsys):
    config_path = _simulate(tmp_path, "--kind", "local_anomaly", "--seed", "3")
    capsys.readouterr()
    assert main(["rank", "--config", str(config_path), "--from", "2021-02", "--to", "2021-03"]) == 0
    out = capsys.readouterr().out
    assert "report 2021-02-28" in out and "report 2021-03-31" in out
    assert sorted(p.name for p in (tmp_path / "reports").glob("*.json")) == [
        "report-2021-02-28.json",
        "report-2021-03-31.json",
    ]

    munis = read_municipalities(tmp_path / "municipalities.csv")
    graph = build_graph(munis, read_centers(tmp_path / "centers.csv"), read_relations(tmp_path / "relations.csv"))
    store = load_store(tmp_path / "consumers.csv", tmp_path / "complaints.csv")
    march = month_end_report(graph, store, munis, month="2021-03")
    payload = json.loads((tmp_path / "reports" / "report-2021-03-31.json").read_text(encoding="utf-8"))
    assert payload == report_payload(march, munis, divergence_summary(march))


def test_rank_range_runs_to_the_last_month_of_data(tmp_path):
    config_path = _simulate(tmp_path)
    assert main(["rank", "--config", str(config_path), "--from", "2021-03", "--out", str(tmp_path / "r")]) == 0
    assert sorted(p.name for p in (tmp_path / "r").glob("*.csv")) == ["report-2021-03-31.csv", "report-2021-04-30.csv"]


def test_month_and_range_are_exclusive(tmp_path, capsys):
    config_path = _simulate(tmp_path)
    capsys.readouterr()
    assert main(["rank", "--config", str(config_path), "--month", "2021-03", "--from", "2021-02"]) == 3
    assert "kind=usage" in capsys.readouterr().err


def test_non_numeric_threshold_in_config_is_a_usage_error(tmp_path, capsys):
    config_path = _simulate(tmp_path)
    config = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    config["cusum"] = {"threshold": "abc", "reset_on_alarm": "false"}
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    capsys.readouterr()
    assert main(["cusum", "--config", str(config_path)]) == 3
    err = capsys.readouterr().err
    assert err.startswith("error code=3 kind=usage")
    assert "cusum.threshold must be a number" in err


def test_incomplete_month_names_first_computable_date(tmp_path, capsys):
    config_path = _simulate(tmp_path)
    capsys.readouterr()
    assert main(["rank", "--config", str(config_path), "--month", "2020-12"]) == 3
    err = capsys.readouterr().err
    assert err.startswith("error code=3 kind=usage")
    assert "2021-01-28" in err


def test_unknown_operator_is_a_domain_error(tmp_path, capsys):
    config_path = _simulate(tmp_path)
    capsys.readouterr()
    assert main(["rank", "--config", str(config_path), "--operators", "Z"]) == 3
    assert "kind=domain" in capsys.readouterr().err


# cusum -----------------------------------------------------------------
def test_cusum_flags_the_step(tmp_path):
    config_path = _simulate(tmp_path, "--kind", "step_change", "--magnitude", "2")
    scan = tmp_path / "scan"
    assert main(["cusum", "--config", str(config_path), "--threshold", "3", "--out", str(scan), "--plot"]) == 0

    summary = json.loads((scan / "alarms.json").read_text(encoding="utf-8"))
    assert summary["parameters"]["threshold"] == 3.0
    assert list(summary["alarms"]) == ["T0000/A"]
    assert summary["alarms"]["T0000/A"]["first_alarm"] == "2021-03-05"

    traces = pd.read_csv(scan / "cusum-traces.csv", dtype={"alarm": str})
    assert set(traces["municipality_id"]) == {"T0000"}
    assert traces["date"].iloc[0] == "2021-01-28"
    assert traces.loc[traces["date"] == "2021-03-05", "alarm"].tolist() == ["true"]
    assert (scan / "cusum.png").stat().st_size > 0


def test_cusum_all_traces_on_flat_world(tmp_path):
    config_path = _simulate(tmp_path)
    scan = tmp_path / "scan"
    assert main(["cusum", "--config", str(config_path), "--out", str(scan), "--all-traces"]) == 0
    summary = json.loads((scan / "alarms.json").read_text(encoding="utf-8"))
    assert summary["alarms"] == {}
    traces = pd.read_csv(scan / "cusum-traces.csv")
    assert (traces["alarm"] == False).all()  # noqa: E712
    assert traces["S"].fillna(0.0).max() == 0.0


def test_cusum_start_before_first_computable_date(tmp_path, capsys):
    config_path = _simulate(tmp_path)
    capsys.readouterr()
    assert main(["cusum", "--config", str(config_path), "--start", "2021-01-10"]) == 3
    assert "2021-01-28" in capsys.readouterr().err


# run logs --------------------------------------------------------------
def _logged_config(tmp_path: Path, log_dir: Path) -> Path:
    config = {
        "inputs": {
            "municipalities": str(BUILD / "municipalities.csv"),
            "centers": str(BUILD / "centers.csv"),
            "relations": str(BUILD / "relations.csv"),
        },
        "output_dir": str(tmp_path / "out"),
        "logging": {"log_dir": str(log_dir)},
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path


def test_run_logs_go_to_their_own_directory(tmp_path):
    config_path = _logged_config(tmp_path, tmp_path / "logs")
    assert main(["build-graph", "--config", str(config_path)]) == 0
    (run_dir,) = (tmp_path / "logs").glob("build-graph-*")
    assert (run_dir / "run.log").read_text(encoding="utf-8").startswith("# vertexrisk build-graph started=")
    assert "build warning" in (run_dir / "run.log").read_text(encoding="utf-8")
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["diagnostics.json", "graph.csv"]


def test_log_dir_inside_output_is_refused(tmp_path, capsys):
    config_path = _logged_config(tmp_path, tmp_path / "out" / "logs")
    assert main(["build-graph", "--config", str(config_path)]) == 3
    assert "must not lie inside" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["--help"], ["rank", "--help"]])
def test_help_exits_cleanly(argv, capsys):
    assert main(argv) == 0
    assert "Usage" in capsys.readouterr().out
