from __future__ import annotations

import datetime as dt
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, List, Sequence

import pandas as pd

from logic.complaints import COMPLAINT_COLUMNS, CONSUMER_COLUMNS, ComplaintStore
from logic.errors import IssueCollector, ValidationError, ValidationIssue
from logic.graph import InfluenceGraph
from logic.influence import Municipality, RelationCategory, RelationRecord, UrbanCenter

_logger = logging.getLogger(__name__)

MUNICIPALITY_COLUMNS = ["id", "name", "population"]
CENTER_COLUMNS = ["center_id", "municipality_id"]
RELATION_COLUMNS = ["from_center", "to_center", "category", "dimension", "order"]
EDGE_COLUMNS = ["target_id", "source_id", "weight"]


def read_municipalities(path: Path | str) -> List[Municipality]:
    frame = _read_table(path, MUNICIPALITY_COLUMNS)
    issues = IssueCollector(str(path))
    out: List[Municipality] = []
    for line, row in _rows(frame):
        population = _parse_int(row["population"], "population", line, issues)
        if not row["id"]:
            issues.add("empty municipality id", line)
        elif population is not None and population < 1:
            issues.add(f"population must be >= 1, got {population}", line)
        elif population is not None:
            out.append(Municipality(row["id"], row["name"], population))
    issues.raise_if_any("invalid municipalities file")
    return out


def read_centers(path: Path | str) -> List[UrbanCenter]:
    frame = _read_table(path, CENTER_COLUMNS)
    issues = IssueCollector(str(path))
    members: "OrderedDict[str, List[str]]" = OrderedDict()
    for line, row in _rows(frame):
        if not row["center_id"] or not row["municipality_id"]:
            issues.add("center_id and municipality_id are required", line)
            continue
        group = members.setdefault(row["center_id"], [])
        if row["municipality_id"] in group:
            issues.add(f"municipality {row['municipality_id']!r} listed twice in {row['center_id']!r}", line)
            continue
        group.append(row["municipality_id"])
    issues.raise_if_any("invalid centers file")
    return [UrbanCenter(cid, tuple(mids)) for cid, mids in members.items()]


def read_relations(path: Path | str) -> List[RelationRecord]:
    frame = _read_table(path, RELATION_COLUMNS)
    issues = IssueCollector(str(path))
    categories = {c.value: c for c in RelationCategory}
    out: List[RelationRecord] = []
    for line, row in _rows(frame):
        category = categories.get(row["category"].lower())
        if category is None:
            issues.add(f"unknown category {row['category']!r}; expected one of {', '.join(categories)}", line)
            continue
        order = None
        if category is not RelationCategory.FULL_LINK:
            order = _parse_int(row["order"], "order", line, issues)
            if order is None:
                continue
            if order not in (1, 2, 3):
                issues.add(f"order must be 1, 2 or 3, got {order}", line)
                continue
            if not row["dimension"]:
                issues.add(f"{category.value} relation needs a dimension", line)
                continue
        if not row["from_center"] or not row["to_center"]:
            issues.add("from_center and to_center are required", line)
            continue
        out.append(RelationRecord(row["from_center"], row["to_center"], category, row["dimension"], order, line))
    issues.raise_if_any("invalid relations file")
    return out


def read_consumers(path: Path | str) -> pd.DataFrame:
    frame = _read_table(path, CONSUMER_COLUMNS)
    issues = IssueCollector(str(path))
    records = []
    for line, row in _rows(frame):
        consumers = _parse_int(row["consumers"], "consumers", line, issues)
        try:
            month = dt.datetime.strptime(row["year_month"], "%Y-%m").strftime("%Y-%m")
        except ValueError:
            issues.add(f"year_month must be YYYY-MM, got {row['year_month']!r}", line)
            continue
        if consumers is None:
            continue
        if consumers < 0:
            issues.add(f"consumers must be non-negative, got {consumers}", line)
            continue
        if not row["municipality_id"] or not row["operator"]:
            issues.add("municipality_id and operator are required", line)
            continue
        records.append((row["municipality_id"], row["operator"], month, consumers, line))
    issues.raise_if_any("invalid consumers file")
    return pd.DataFrame(records, columns=[*CONSUMER_COLUMNS, "line"])


def read_complaints(path: Path | str) -> pd.DataFrame:
    frame = _read_table(path, COMPLAINT_COLUMNS)
    issues = IssueCollector(str(path))
    records = []
    for line, row in _rows(frame):
        count = _parse_int(row["count"], "count", line, issues)
        try:
            day = dt.date.fromisoformat(row["date"])
        except ValueError:
            issues.add(f"date must be YYYY-MM-DD, got {row['date']!r}", line)
            continue
        if count is None:
            continue
        if count < 0:
            issues.add(f"count must be non-negative, got {count}", line)
            continue
        if not row["municipality_id"] or not row["operator"]:
            issues.add("municipality_id and operator are required", line)
            continue
        records.append((row["municipality_id"], row["operator"], day, count, line))
    issues.raise_if_any("invalid complaints file")
    return pd.DataFrame(records, columns=[*COMPLAINT_COLUMNS, "line"])


def load_store(consumers_path: Path | str, complaints_path: Path | str) -> ComplaintStore:
    consumers = read_consumers(consumers_path)
    complaints = read_complaints(complaints_path)
    try:
        return ComplaintStore.from_frames(consumers, complaints)
    except ValidationError as exc:
        sources = {"consumers": str(consumers_path), "complaints": str(complaints_path)}
        exc.issues = [
            type(issue)(sources.get(issue.source, issue.source), issue.line, issue.reason) for issue in exc.issues
        ]
        raise


def read_edge_list(path: Path | str, vertices: Sequence[str]) -> InfluenceGraph:
    """Load a normalized edge list written by ``write_edge_list``."""
    frame = _read_table(path, EDGE_COLUMNS)
    issues = IssueCollector(str(path))
    edges = []
    for line, row in _rows(frame):
        try:
            weight = float(row["weight"])
        except ValueError:
            issues.add(f"weight is not a number: {row['weight']!r}", line)
            continue
        edges.append((row["target_id"], row["source_id"], weight))
    issues.raise_if_any("invalid edge list")
    try:
        return InfluenceGraph.from_edges(vertices, edges, normalized=True)
    except ValidationError as exc:
        exc.issues = [type(issue)(str(path), issue.line, issue.reason) for issue in exc.issues]
        raise


# Internal helpers ----------------------------------------------------
def _read_table(path: Path | str, columns: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8-sig",
        )
    except pd.errors.EmptyDataError:
        raise ValidationError("empty input file", [_issue(path, 1, f"expected header {','.join(columns)}")]) from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError("unreadable input file", [_issue(path, None, str(exc))]) from None

    header = [str(c).strip() for c in frame.columns]
    if header != columns:
        raise ValidationError(
            "unexpected header",
            [_issue(path, 1, f"expected {','.join(columns)}, got {','.join(header)}")],
        )
    frame.columns = header
    frame = frame.fillna("")
    for column in header:
        frame[column] = frame[column].astype(str).str.strip()
    return frame


def _rows(frame: pd.DataFrame) -> Iterable[tuple[int, dict]]:
    """Yield ``(file_line, row)``; the header is line 1 and blank lines are skipped."""
    for offset, row in enumerate(frame.to_dict(orient="records")):
        if not any(row.values()):
            continue
        yield offset + 2, row


def _parse_int(value: str, label: str, line: int, issues: IssueCollector) -> int | None:
    try:
        return int(value)
    except ValueError:
        issues.add(f"{label} must be an integer, got {value!r}", line)
        return None


def _issue(path: Path, line: int | None, reason: str) -> ValidationIssue:
    return ValidationIssue(str(path), line, reason)
