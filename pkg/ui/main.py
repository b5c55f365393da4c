from __future__ import annotations

import contextlib
import datetime as dt
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import click
import typer

from config import RunConfig, apply_overrides, load_config, save_config, scenario_parameters
from interfaces.inputs import load_store, read_centers, read_edge_list, read_municipalities, read_relations
from interfaces.outputs import (
    write_alarm_summary,
    write_cusum_traces,
    write_diagnostics,
    write_edge_list,
    write_report,
    write_scenario,
    write_world,
)
from logic.complaints import ComplaintStore
from logic.cusum import discrepancy_history, history_traces, scan_all
from logic.errors import UsageError, ValidationError, VertexRiskError
from logic.graph import InfluenceGraph
from logic.influence import GraphBuild, Municipality, build_graph_with_diagnostics
from logic.logging_utils import RunLogManager
from logic.ranking import divergence_summary, month_end_report, monthly_reports
from logic.scenario import ScenarioParameters, generate_scenario

from .shared import alarm_table, diagnostics_table, divergence_line, make_console, print_tables, report_tables

_logger = logging.getLogger(__name__)

EDGE_LIST_NAME = "graph.csv"
DIAGNOSTICS_NAME = "diagnostics.json"
TRACES_NAME = "cusum-traces.csv"
ALARMS_NAME = "alarms.json"
CHART_NAME = "cusum.png"

app = typer.Typer(
    name="vertexrisk",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
    help="Rank municipalities for inspection by complaint-rate discrepancy over an influence graph.",
)

# Shared options --------------------------------------------------------
CONFIG_OPTION = typer.Option(None, "--config", "-c", help="YAML config file; flags override it.")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory.")
MUNICIPALITIES_OPTION = typer.Option(None, "--municipalities", help="municipalities.csv (id,name,population).")
CENTERS_OPTION = typer.Option(None, "--centers", help="centers.csv (center_id,municipality_id).")
RELATIONS_OPTION = typer.Option(None, "--relations", help="relations.csv.")
CONSUMERS_OPTION = typer.Option(None, "--consumers", help="consumers.csv (monthly subscriber counts).")
COMPLAINTS_OPTION = typer.Option(None, "--complaints", help="complaints.csv (daily complaint counts).")
GRAPH_OPTION = typer.Option(None, "--graph", help="Edge list from build-graph; built from centers/relations if absent.")
OPERATORS_OPTION = typer.Option(None, "--operators", help="Comma-separated operator filter.")


@app.command("build-graph")
def build_graph_command(
    config: Optional[Path] = CONFIG_OPTION,
    municipalities: Optional[Path] = MUNICIPALITIES_OPTION,
    centers: Optional[Path] = CENTERS_OPTION,
    relations: Optional[Path] = RELATIONS_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Build the normalized influence graph and write its edge list and diagnostics."""
    run = _resolve(
        config,
        {
            "inputs.municipalities": municipalities,
            "inputs.centers": centers,
            "inputs.relations": relations,
            "output_dir": out,
        },
    )
    out_dir = run.require_output_dir()
    with _run_logs(run, "build-graph"):
        _, build = _build(run)
        write_edge_list(build.graph, out_dir / EDGE_LIST_NAME)
        write_diagnostics(build.diagnostics, out_dir / DIAGNOSTICS_NAME)
        for warning in build.diagnostics.warnings:
            _logger.info("build warning: %s", warning)

    console = make_console()
    console.print(f"vertices={build.diagnostics.n_vertices} edges={build.diagnostics.n_edges}")
    print_tables(console, [diagnostics_table(build.diagnostics)])


@app.command("rank")
def rank_command(
    config: Optional[Path] = CONFIG_OPTION,
    municipalities: Optional[Path] = MUNICIPALITIES_OPTION,
    centers: Optional[Path] = CENTERS_OPTION,
    relations: Optional[Path] = RELATIONS_OPTION,
    graph: Optional[Path] = GRAPH_OPTION,
    consumers: Optional[Path] = CONSUMERS_OPTION,
    complaints: Optional[Path] = COMPLAINTS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    month: Optional[str] = typer.Option(None, "--month", help="YYYY-MM; defaults to the last month of data."),
    first_month: Optional[str] = typer.Option(None, "--from", help="First month of a range report (YYYY-MM)."),
    last_month: Optional[str] = typer.Option(
        None, "--to", help="Last month of a range report (YYYY-MM); defaults to the last month of data."
    ),
    k: Optional[int] = typer.Option(None, "--k", "-k", help="Number of inspections per section."),
    mode: Optional[str] = typer.Option(None, "--mode", help="joint or per_operator."),
    operators: Optional[str] = OPERATORS_OPTION,
) -> None:
    """Write month-end inspection reports and print the top-K of each stratum."""
    run = _resolve(
        config,
        {
            "inputs.municipalities": municipalities,
            "inputs.centers": centers,
            "inputs.relations": relations,
            "inputs.graph": graph,
            "inputs.consumers": consumers,
            "inputs.complaints": complaints,
            "output_dir": out,
            "ranking.month": month,
            "ranking.from": first_month,
            "ranking.to": last_month,
            "ranking.k": k,
            "ranking.mode": mode,
            "ranking.operators": operators,
        },
    )
    out_dir = run.require_output_dir()
    with _run_logs(run, "rank") as logs:
        munis, influence, store = _analysis_inputs(run)
        if run.first_month:
            reports = monthly_reports(
                influence,
                store,
                munis,
                run.first_month,
                run.last_month or store.date_span[1],
                operators=run.operators,
                strata=run.strata,
                k=run.k,
                mode=run.mode,
            )
        else:
            reports = [
                month_end_report(
                    influence,
                    store,
                    munis,
                    operators=run.operators,
                    strata=run.strata,
                    k=run.k,
                    month=run.month,
                    mode=run.mode,
                )
            ]
        summaries = [divergence_summary(report) for report in reports]
        for report, summary in zip(reports, summaries):
            write_report(report, munis, out_dir, summary)
        if logs is not None:
            notes = logs.get_logger("ranking.log")
            for report, summary in zip(reports, summaries):
                for section in report.sections:
                    notes.log(
                        f"{report.date} {section.label}: {len(section.entries)} ranked, "
                        f"divergence={summary.per_section[section.label]}"
                    )
                for excluded in report.excluded:
                    notes.log(
                        f"{report.date} excluded {excluded.municipality}/{excluded.operator} "
                        f"in {excluded.stratum}: {excluded.reason}"
                    )

    names = {m.id: m.name for m in munis}
    console = make_console()
    for report, summary in zip(reports, summaries):
        if len(reports) > 1:
            console.rule(f"report {report.date}")
        print_tables(console, report_tables(report, names))
        console.print(divergence_line(summary))
    console.print(f"tie-break: {reports[0].tie_break}")


@app.command("cusum")
def cusum_command(
    config: Optional[Path] = CONFIG_OPTION,
    municipalities: Optional[Path] = MUNICIPALITIES_OPTION,
    centers: Optional[Path] = CENTERS_OPTION,
    relations: Optional[Path] = RELATIONS_OPTION,
    graph: Optional[Path] = GRAPH_OPTION,
    consumers: Optional[Path] = CONSUMERS_OPTION,
    complaints: Optional[Path] = COMPLAINTS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    start: Optional[str] = typer.Option(None, "--start", help="First day scanned (YYYY-MM-DD)."),
    end: Optional[str] = typer.Option(None, "--end", help="Last day scanned (YYYY-MM-DD)."),
    target_mean: Optional[float] = typer.Option(None, "--target-mean", help="In-control mean of the discrepancy."),
    allowance: Optional[float] = typer.Option(None, "--allowance", help="Slack k subtracted each step."),
    threshold: Optional[float] = typer.Option(None, "--threshold", help="Alarm threshold h."),
    reset: Optional[bool] = typer.Option(None, "--reset/--no-reset", help="Reset the statistic after an alarm."),
    operators: Optional[str] = OPERATORS_OPTION,
    all_traces: Optional[bool] = typer.Option(None, "--all-traces/--alarmed-traces", help="Trace every key."),
    plot: Optional[bool] = typer.Option(None, "--plot/--no-plot", help="Draw a chart of the alarmed traces."),
) -> None:
    """Scan every (municipality, operator) discrepancy series with an upper CUSUM."""
    run = _resolve(
        config,
        {
            "inputs.municipalities": municipalities,
            "inputs.centers": centers,
            "inputs.relations": relations,
            "inputs.graph": graph,
            "inputs.consumers": consumers,
            "inputs.complaints": complaints,
            "output_dir": out,
            "ranking.operators": operators,
            "cusum.start": start,
            "cusum.end": end,
            "cusum.target_mean": target_mean,
            "cusum.allowance": allowance,
            "cusum.threshold": threshold,
            "cusum.reset_on_alarm": reset,
            "cusum.all_traces": all_traces,
            "cusum.plot": plot,
        },
    )
    out_dir = run.require_output_dir()
    with _run_logs(run, "cusum") as logs:
        _, influence, store = _analysis_inputs(run)
        start_day, end_day = _scan_range(run, store)
        history = discrepancy_history(influence, store, run.operators, start_day, end_day)
        alarms = scan_all(history, run.cusum)
        keys = list(history.keys) if run.all_traces else [(a.municipality, a.operator) for a in alarms]
        traces = history_traces(history, run.cusum, keys)
        write_cusum_traces(traces, out_dir / TRACES_NAME)
        write_alarm_summary(alarms, run.cusum, out_dir / ALARMS_NAME)
        if run.plot:
            from interfaces.plots import plot_cusum_traces

            alarmed = {(a.municipality, a.operator): traces[(a.municipality, a.operator)] for a in alarms}
            plot_cusum_traces(alarmed, run.cusum, out_dir / CHART_NAME)
        if logs is not None:
            notes = logs.get_logger("alarms.log")
            for alarm in alarms:
                notes.log(f"{alarm.municipality}/{alarm.operator} first={alarm.first_alarm} count={len(alarm.alarm_dates)}")

    print_tables(make_console(), [alarm_table(alarms)])


@app.command("simulate")
def simulate_command(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    kind: Optional[str] = typer.Option(None, "--kind", help="flat, local_anomaly, regional_anomaly or step_change."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed."),
    magnitude: Optional[float] = typer.Option(None, "--magnitude", help="Anomaly multiplier."),
    onset: Optional[str] = typer.Option(None, "--onset", help="Anomaly onset (YYYY-MM-DD)."),
    start: Optional[str] = typer.Option(None, "--start", help="First generated day (YYYY-MM-DD)."),
    days: Optional[int] = typer.Option(None, "--days", help="Number of generated days."),
    operators: Optional[str] = typer.Option(None, "--operators", help="Comma-separated operator names."),
    region: Optional[int] = typer.Option(None, "--region", help="Region hit by the anomaly."),
    noise: Optional[float] = typer.Option(None, "--noise", help="Relative multiplicative noise on counts."),
) -> None:
    """Generate a synthetic, fully valid input set for a scenario."""
    raw = load_config(config)
    raw = apply_overrides(
        raw,
        {
            "output_dir": out,
            "simulate.kind": kind,
            "simulate.seed": seed,
            "simulate.magnitude": magnitude,
            "simulate.onset": onset,
            "simulate.start": start,
            "simulate.days": days,
            "simulate.operators": operators,
            "simulate.region": region,
            "simulate.noise": noise,
        },
    )
    run = RunConfig.from_dict(raw)
    out_dir = run.require_output_dir()
    params = scenario_parameters(raw["simulate"])

    with _run_logs(run, "simulate"):
        scenario = generate_scenario(params)
        paths = write_world(scenario.world, out_dir)
        write_scenario(scenario, out_dir / "scenario.json")
        save_config(_scenario_config(raw["simulate"], params, paths), out_dir / "config.yaml")

    make_console().print(
        f"scenario={params.kind.value} municipalities={len(scenario.world.municipalities)} "
        f"complaint_rows={len(scenario.world.complaints)} out={out_dir}"
    )


# Entry point -----------------------------------------------------------
def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line and return its exit code.

    Failures print one ``error`` line to stderr, plus one ``issue`` line per
    validation problem.
    """
    try:
        result = app(args=argv, prog_name="vertexrisk", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _report_error(1, "runtime", "aborted")
        return 1
    except click.exceptions.UsageError as exc:
        _report_error(UsageError.exit_code, UsageError.kind, exc.format_message())
        return UsageError.exit_code
    except ValidationError as exc:
        _report_error(exc.exit_code, exc.kind, exc.message)
        for issue in exc.issues:
            line = "" if issue.line is None else issue.line
            typer.echo(f"issue source={issue.source} line={line} reason={json.dumps(issue.reason)}", err=True)
        return exc.exit_code
    except VertexRiskError as exc:
        _report_error(exc.exit_code, exc.kind, str(exc))
        return exc.exit_code
    except OSError as exc:
        _report_error(1, "io", str(exc))
        return 1
    return result if isinstance(result, int) else 0


# Internal helpers ------------------------------------------------------
def _report_error(code: int, kind: str, message: str) -> None:
    typer.echo(f"error code={code} kind={kind} message={json.dumps(message)}", err=True)


def _resolve(config_path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    raw = apply_overrides(load_config(config_path), overrides)
    return RunConfig.from_dict(raw)


@contextlib.contextmanager
def _run_logs(run: RunConfig, label: str) -> Iterator[Optional[RunLogManager]]:
    if run.log_dir is None:
        yield None
        return
    if run.output_dir is not None and _is_within(run.log_dir, run.output_dir):
        raise UsageError(f"log_dir {run.log_dir} must not lie inside the output directory {run.output_dir}")
    manager = RunLogManager(run.log_dir, label)
    manager.attach()
    try:
        yield manager
    finally:
        manager.close()


def _is_within(path: Path, parent: Path) -> bool:
    try:
        path.resolve().relative_to(parent.resolve())
    except ValueError:
        return False
    return True


def _build(run: RunConfig) -> Tuple[List[Municipality], GraphBuild]:
    munis = read_municipalities(run.input_path("municipalities"))
    centers = read_centers(run.input_path("centers"))
    relations = read_relations(run.input_path("relations"))
    return munis, build_graph_with_diagnostics(munis, centers, relations, run.build)


def _analysis_inputs(run: RunConfig) -> Tuple[List[Municipality], InfluenceGraph, ComplaintStore]:
    if run.inputs.get("graph") is not None:
        munis = read_municipalities(run.input_path("municipalities"))
        influence = read_edge_list(run.input_path("graph"), [m.id for m in munis])
    else:
        munis, build = _build(run)
        influence = build.graph
    store = load_store(run.input_path("consumers"), run.input_path("complaints"))
    return munis, influence, store


def _scan_range(run: RunConfig, store: ComplaintStore) -> Tuple[dt.date, dt.date]:
    first = store.first_computable_date()
    start = run.start or first
    end = run.end or store.date_span[1]
    if start < first:
        raise UsageError(f"scan start {start} precedes a complete 28-day window; first computable date is {first}")
    if end < start:
        raise UsageError(f"scan end {end} precedes start {start}")
    return start, end


def _scenario_config(section: Dict[str, Any], params: ScenarioParameters, paths: Dict[str, Path]) -> Dict[str, Any]:
    config = load_config(None)
    config["inputs"].update({key: path.name for key, path in paths.items()})
    config["output_dir"] = "reports"
    config["ranking"]["operators"] = list(params.operators)
    simulate = dict(section)
    simulate.update(
        {
            "kind": params.kind.value,
            "seed": params.seed,
            "magnitude": params.magnitude,
            "onset": params.resolved_onset.isoformat(),
            "start": params.start.isoformat(),
            "days": params.days,
            "operators": list(params.operators),
            "region": params.region,
            "noise": params.noise,
        }
    )
    config["simulate"] = simulate
    return config
