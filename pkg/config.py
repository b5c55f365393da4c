from __future__ import annotations

import datetime as dt
import math
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

try:
    import yaml
except ImportError as exc:  # pragma: no cover - environment specific
    raise RuntimeError(
        "PyYAML is required to use the configuration system. "
        "Install it with `pip install pyyaml`."
    ) from exc

from interfaces.outputs import atomic_write_text
from logic.cusum import CusumConfig
from logic.errors import UsageError
from logic.influence import BuildConfig
from logic.ranking import DEFAULT_K, DEFAULT_STRATA, RankingMode, Stratum
from logic.scenario import ScenarioKind, ScenarioParameters

INPUT_KEYS = ("municipalities", "centers", "relations", "consumers", "complaints", "graph")


def _default_config() -> Dict[str, Any]:
    """Return a fresh default configuration structure."""
    return {
        "inputs": {key: None for key in INPUT_KEYS},
        "output_dir": None,
        "build": {
            "goods_services_discounts": [1.0, 0.95, 0.90],
            "metro_discounts": [1.0, 0.5, 1.0 / 3.0],
        },
        "ranking": {
            "k": DEFAULT_K,
            "mode": RankingMode.JOINT.value,
            "month": None,
            "from": None,
            "to": None,
            "operators": None,
            "strata": [
                {"name": s.name, "min_population": s.min_population, "max_population": s.max_population}
                for s in DEFAULT_STRATA
            ],
        },
        "cusum": {
            "target_mean": 1.0,
            "allowance": 0.25,
            "threshold": 5.0,
            "reset_on_alarm": True,
            "start": None,
            "end": None,
            "plot": False,
            "all_traces": False,
        },
        "simulate": {
            "kind": ScenarioKind.FLAT.value,
            "seed": 0,
            "magnitude": 3.0,
            "onset": None,
            "start": "2021-01-01",
            "days": 120,
            "operators": ["A", "B"],
            "anomaly_operator": None,
            "regions": 2,
            "towns_per_region": 5,
            "region": 0,
            "noise": 0.0,
        },
        "logging": {
            "log_dir": None,
        },
    }


def load_config(path: Path | str | None = None) -> Dict[str, Any]:
    """Load configuration from YAML, falling back to defaults if missing/empty."""
    config = _default_config()
    if path is None:
        return config

    target = Path(path)
    if not target.is_file():
        raise UsageError(f"config file not found: {target}")

    with target.open("r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"config file {target} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config file {target} must hold a mapping at top level")

    # Shallow merge on top-level sections.
    for key, value in raw.items():
        if isinstance(value, dict) and key in config and isinstance(config[key], dict):
            config[key].update(value)
        else:
            config[key] = value

    base = target.resolve().parent
    for key, value in config["inputs"].items():
        if value is not None and not Path(value).is_absolute():
            config["inputs"][key] = str(base / value)
    for key in ("output_dir",):
        if config.get(key) is not None and not Path(config[key]).is_absolute():
            config[key] = str(base / config[key])
    log_dir = config["logging"].get("log_dir")
    if log_dir is not None and not Path(log_dir).is_absolute():
        config["logging"]["log_dir"] = str(base / log_dir)

    return config


def save_config(config: Dict[str, Any], path: Path | str) -> Path:
    """Persist configuration to YAML, replacing ``path`` atomically."""
    text = yaml.safe_dump(deepcopy(config), default_flow_style=False, sort_keys=False)
    return atomic_write_text(path, text)


def apply_overrides(config: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Overlay command-line values given as dotted keys; ``None`` means not given."""
    merged = deepcopy(config)
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if key:
            merged.setdefault(section, {})[key] = value
        else:
            merged[section] = value
    return merged


# Resolved run configuration ------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    inputs: Dict[str, Path | None] = field(default_factory=dict)
    output_dir: Path | None = None
    build: BuildConfig = field(default_factory=BuildConfig)
    k: int = DEFAULT_K
    mode: RankingMode = RankingMode.JOINT
    month: str | None = None
    first_month: str | None = None
    last_month: str | None = None
    operators: Tuple[str, ...] | None = None
    strata: Tuple[Stratum, ...] = DEFAULT_STRATA
    cusum: CusumConfig = field(default_factory=CusumConfig)
    start: dt.date | None = None
    end: dt.date | None = None
    plot: bool = False
    all_traces: bool = False
    log_dir: Path | None = None

    @classmethod
    def from_dict(cls, config: Mapping[str, Any]) -> "RunConfig":
        inputs = {
            key: Path(value) if value is not None else None
            for key, value in (config.get("inputs") or {}).items()
        }
        build = config.get("build") or {}
        ranking = config.get("ranking") or {}
        cusum = config.get("cusum") or {}
        try:
            mode = RankingMode(str(ranking.get("mode", RankingMode.JOINT.value)))
        except ValueError:
            raise UsageError(
                f"ranking mode must be one of {', '.join(m.value for m in RankingMode)}, got {ranking.get('mode')!r}"
            ) from None
        month = _month_or_none(ranking.get("month"))
        first_month = _month_or_none(ranking.get("from"), "ranking.from")
        last_month = _month_or_none(ranking.get("to"), "ranking.to")
        if month and (first_month or last_month):
            raise UsageError("ranking.month cannot be combined with ranking.from/ranking.to")
        if last_month and not first_month:
            raise UsageError("ranking.to needs ranking.from")
        if first_month and last_month and last_month < first_month:
            raise UsageError(f"ranking.from {first_month} comes after ranking.to {last_month}")
        operators = ranking.get("operators")
        if isinstance(operators, str):
            operators = [op.strip() for op in operators.split(",") if op.strip()]

        return cls(
            inputs=inputs,
            output_dir=_path_or_none(config.get("output_dir")),
            build=BuildConfig(
                goods_services_discounts=_floats(
                    build.get("goods_services_discounts", (1.0, 0.95, 0.90)), "build.goods_services_discounts"
                ),
                metro_discounts=_floats(build.get("metro_discounts", (1.0, 0.5, 1.0 / 3.0)), "build.metro_discounts"),
            ),
            k=_as_int(ranking.get("k", DEFAULT_K), "ranking.k"),
            mode=mode,
            month=month,
            first_month=first_month,
            last_month=last_month,
            operators=tuple(operators) if operators else None,
            strata=_strata(ranking.get("strata")),
            cusum=CusumConfig(
                target_mean=_as_float(cusum.get("target_mean", 1.0), "cusum.target_mean"),
                allowance=_as_float(cusum.get("allowance", 0.25), "cusum.allowance"),
                threshold=_as_float(cusum.get("threshold", 5.0), "cusum.threshold"),
                reset_on_alarm=_as_bool(cusum.get("reset_on_alarm", True), "cusum.reset_on_alarm"),
            ),
            start=_date_or_none(cusum.get("start"), "cusum.start"),
            end=_date_or_none(cusum.get("end"), "cusum.end"),
            plot=_as_bool(cusum.get("plot", False), "cusum.plot"),
            all_traces=_as_bool(cusum.get("all_traces", False), "cusum.all_traces"),
            log_dir=_path_or_none((config.get("logging") or {}).get("log_dir")),
        )

    def input_path(self, key: str) -> Path:
        """Path of an input file, which must be configured and exist."""
        path = self.inputs.get(key)
        if path is None:
            raise UsageError(f"missing input: set inputs.{key} in the config or pass --{key}")
        if not path.is_file():
            raise FileNotFoundError(f"{key} file not found: {path}")
        return path

    def require_output_dir(self) -> Path:
        if self.output_dir is None:
            raise UsageError("missing output directory: set output_dir in the config or pass --out")
        return self.output_dir


def scenario_parameters(section: Mapping[str, Any]) -> ScenarioParameters:
    """Build validated scenario parameters from the ``simulate`` section."""
    try:
        kind = ScenarioKind(str(section.get("kind", ScenarioKind.FLAT.value)))
    except ValueError:
        raise UsageError(
            f"scenario kind must be one of {', '.join(k.value for k in ScenarioKind)}, got {section.get('kind')!r}"
        ) from None
    operators = section.get("operators") or ["A", "B"]
    if isinstance(operators, str):
        operators = [op.strip() for op in operators.split(",") if op.strip()]

    return ScenarioParameters(
        kind=kind,
        seed=_as_int(section.get("seed", 0), "simulate.seed"),
        magnitude=_as_float(section.get("magnitude", 3.0), "simulate.magnitude"),
        start=_date_or_none(section.get("start"), "simulate.start") or dt.date(2021, 1, 1),
        days=_as_int(section.get("days", 120), "simulate.days"),
        onset=_date_or_none(section.get("onset"), "simulate.onset"),
        operators=tuple(operators),
        anomaly_operator=section.get("anomaly_operator"),
        regions=_as_int(section.get("regions", 2), "simulate.regions"),
        towns_per_region=_as_int(section.get("towns_per_region", 5), "simulate.towns_per_region"),
        region=_as_int(section.get("region", 0), "simulate.region"),
        noise=_as_float(section.get("noise", 0.0), "simulate.noise"),
    )


# Parsing helpers -----------------------------------------------------
def _path_or_none(value: Any) -> Path | None:
    return Path(value) if value not in (None, "") else None


def _as_int(value: Any, label: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"{label} must be an integer, got {value!r}") from None


def _as_float(value: Any, label: str) -> float:
    if isinstance(value, bool):
        raise UsageError(f"{label} must be a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{label} must be a number, got {value!r}") from None
    if math.isnan(number):
        raise UsageError(f"{label} must be a number, got {value!r}")
    return number


def _floats(values: Any, label: str) -> Tuple[float, ...]:
    if isinstance(values, (str, bytes)) or not isinstance(values, (list, tuple)):
        raise UsageError(f"{label} must be a list of numbers, got {values!r}")
    return tuple(_as_float(v, label) for v in values)


def _as_bool(value: Any, label: str) -> bool:
    # Only real YAML booleans; a quoted "false" is rejected.
    if not isinstance(value, bool):
        raise UsageError(f"{label} must be true or false, got {value!r}")
    return value


def _date_or_none(value: Any, label: str) -> dt.date | None:
    if value in (None, ""):
        return None
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise UsageError(f"{label} must be YYYY-MM-DD, got {value!r}") from None


def _month_or_none(value: Any, label: str = "ranking.month") -> str | None:
    if value in (None, ""):
        return None
    try:
        return dt.datetime.strptime(str(value), "%Y-%m").strftime("%Y-%m")
    except ValueError:
        raise UsageError(f"{label} must be YYYY-MM, got {value!r}") from None


def _strata(value: Any) -> Tuple[Stratum, ...]:
    if not value:
        return DEFAULT_STRATA
    strata = []
    for item in value:
        try:
            strata.append(
                Stratum(
                    name=str(item["name"]),
                    min_population=int(item["min_population"]),
                    max_population=None if item.get("max_population") is None else int(item["max_population"]),
                )
            )
        except (KeyError, TypeError, ValueError):
            raise UsageError(f"invalid stratum definition {item!r}") from None
    _check_disjoint(strata)
    return tuple(strata)


def _check_disjoint(strata: List[Stratum]) -> None:
    names = [s.name for s in strata]
    if len(set(names)) != len(names):
        raise UsageError(f"stratum names must be unique, got {names}")
    for i, a in enumerate(strata):
        for b in strata[i + 1 :]:
            a_max = math.inf if a.max_population is None else a.max_population
            b_max = math.inf if b.max_population is None else b.max_population
            if a.min_population < b_max and b.min_population < a_max:
                raise UsageError(f"strata {a.name!r} and {b.name!r} overlap; each municipality must fall in one stratum")

