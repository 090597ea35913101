"""Case-file and scenario ingestion, plus the delimited result formats.

Only the MATPOWER fields that matter for DC are read: bus id/type/Pd,
gen bus/Pg/status, branch from/to/x/status and baseMVA.  Everything else is
skipped with a single aggregated warning per file.  Scenarios are tagged
JSON records describing a change set (and optionally the reference
preparation and a contingency list) against a case file.

Result tables are CSV with a fixed column order and 12 significant digits
so acceptance diffs are bit-stable.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .grid_model import (
    Bus,
    Branch,
    Disconnect,
    Grid,
    GridDisconnected,
    Merge,
    Reconnect,
    Split,
    Substation,
    Terminal,
    TopologyChange,
)

logger = logging.getLogger(__name__)

SCENARIO_VERSION = 1


class CaseIoError(Exception):
    """Base class for case/scenario ingestion errors."""


class ParseError(CaseIoError):
    """Malformed case file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedFeature(CaseIoError):
    """Valid file, but uses a feature outside the DC subset."""


class SchemaError(CaseIoError):
    """Scenario JSON does not match the documented schema."""


class UnknownId(CaseIoError):
    """Scenario references a branch or substation absent from the grid."""


# -- MATPOWER ---------------------------------------------------------------


def _matrix_rows(text: str, name: str) -> list[tuple[int, list[float]]]:
    """Numeric rows of ``mpc.<name> = [...]`` with their 1-based line numbers."""
    lines = text.splitlines()
    rows: list[tuple[int, list[float]]] = []
    in_matrix = False
    pattern = re.compile(rf"mpc\.{name}\s*=\s*\[")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("%", 1)[0].strip()
        if not in_matrix:
            if pattern.search(line):
                in_matrix = True
                line = pattern.split(line, 1)[1] if pattern.search(line) else ""
                line = line.strip()
                if not line:
                    continue
            else:
                continue
        closed = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append((lineno, [float(tok) for tok in chunk.split()]))
            except ValueError:
                raise ParseError(f"non-numeric token in mpc.{name} row", lineno) from None
        if closed:
            return rows
    if in_matrix:
        raise ParseError(f"mpc.{name} matrix is not terminated", len(lines))
    raise ParseError(f"mpc.{name} matrix not found")


def _base_mva(text: str) -> float:
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9eE+.\-]+)\s*;", text)
    if not m:
        raise ParseError("mpc.baseMVA not found")
    return float(m.group(1))


def parse_matpower(text: str, name: str = "") -> Grid:
    """Parse the DC-relevant subset of a MATPOWER ``.m`` case file.

    Injections are (generation - load) / baseMVA per bus, branch
    susceptance is 1/x, branch status is honoured and the type-3 bus is the
    slack.  Raises :class:`ParseError` on malformed input and
    :class:`UnsupportedFeature` for islands or non-positive reactances.
    """
    base = _base_mva(text)
    if base <= 0:
        raise ParseError("baseMVA must be positive")

    bus_rows = _matrix_rows(text, "bus")
    gen_rows = _matrix_rows(text, "gen")
    branch_rows = _matrix_rows(text, "branch")

    load = {}
    slack_ids = []
    bus_order = []
    ignored = {"shunt": 0, "resistance": 0, "charging": 0, "tap": 0, "shift": 0}
    for lineno, row in bus_rows:
        if len(row) < 3:
            raise ParseError("bus row needs at least id, type, Pd", lineno)
        bus_id = str(int(row[0]))
        bus_type = int(row[1])
        if bus_id in load:
            raise ParseError(f"duplicate bus id {bus_id}", lineno)
        if bus_type == 4:
            raise UnsupportedFeature(f"bus {bus_id} is flagged isolated (type 4)")
        if bus_type == 3:
            slack_ids.append(bus_id)
        if len(row) > 5 and (row[4] != 0.0 or row[5] != 0.0):
            ignored["shunt"] += 1
        load[bus_id] = row[2]
        bus_order.append(bus_id)
    if len(slack_ids) != 1:
        raise ParseError(
            f"exactly one type-3 (slack) bus required, found {len(slack_ids)}"
        )

    generation = dict.fromkeys(load, 0.0)
    for lineno, row in gen_rows:
        if len(row) < 2:
            raise ParseError("gen row needs at least bus and Pg", lineno)
        bus_id = str(int(row[0]))
        if bus_id not in load:
            raise ParseError(f"gen at unknown bus {bus_id}", lineno)
        status = int(row[7]) if len(row) > 7 else 1
        if status > 0:
            generation[bus_id] += row[1]

    branches = []
    seen: dict[str, int] = {}
    for lineno, row in branch_rows:
        if len(row) < 4:
            raise ParseError("branch row needs at least from, to, r, x", lineno)
        f_bus, t_bus = str(int(row[0])), str(int(row[1]))
        if f_bus not in load or t_bus not in load:
            raise ParseError(f"branch endpoint {f_bus}-{t_bus} unknown", lineno)
        if f_bus == t_bus:
            raise ParseError(f"branch {f_bus}-{t_bus} is a self-loop", lineno)
        x = row[3]
        if x <= 0:
            raise UnsupportedFeature(
                f"branch {f_bus}-{t_bus}: non-positive reactance {x} is outside the DC subset"
            )
        if row[2] != 0.0:
            ignored["resistance"] += 1
        if len(row) > 4 and row[4] != 0.0:
            ignored["charging"] += 1
        if len(row) > 8 and row[8] not in (0.0, 1.0):
            ignored["tap"] += 1
        if len(row) > 9 and row[9] != 0.0:
            ignored["shift"] += 1
        status = int(row[10]) if len(row) > 10 else 1
        base_id = f"{f_bus}-{t_bus}"
        seen[base_id] = seen.get(base_id, 0) + 1
        branch_id = base_id if seen[base_id] == 1 else f"{base_id}#{seen[base_id]}"
        branches.append((branch_id, f_bus, t_bus, 1.0 / x, status > 0))

    skipped = {k: v for k, v in ignored.items() if v}
    if skipped:
        details = ", ".join(f"{k} on {v} rows" for k, v in skipped.items())
        logger.warning("%s: ignoring AC-only fields (%s)", name or "case", details)

    try:
        return Grid.create(
            buses=[(b, (generation[b] - load[b]) / base) for b in bus_order],
            branches=branches,
            slack=slack_ids[0],
            base_mva=base,
            name=name,
        )
    except GridDisconnected as exc:
        raise UnsupportedFeature(f"case describes multiple islands: {exc}") from None


def write_matpower(grid: Grid) -> str:
    """Serialize a grid back to a MATPOWER case (DC fields only).

    Split substations cannot be represented; positive injections become
    generators and negative ones loads, which round-trips the electrical
    state exactly.
    """
    if any(s.split for s in grid.substations):
        raise UnsupportedFeature("split substations are not representable in MATPOWER")
    try:
        numeric = {b.id: int(b.id) for b in grid.buses}
    except ValueError:
        raise UnsupportedFeature("bus ids must be integers for MATPOWER output") from None

    out = ["function mpc = case_export", "mpc.version = '2';",
           f"mpc.baseMVA = {grid.base_mva:.12g};", "", "mpc.bus = ["]
    for b in grid.buses:
        bus_type = 3 if b.is_slack else 1
        pd = -b.injection * grid.base_mva if b.injection < 0 else 0.0
        out.append(
            f"\t{numeric[b.id]}\t{bus_type}\t{pd:.12g}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;"
        )
    out.append("];")
    out.append("")
    out.append("mpc.gen = [")
    for b in grid.buses:
        if b.injection > 0:
            pg = b.injection * grid.base_mva
            out.append(f"\t{numeric[b.id]}\t{pg:.12g}\t0\t0\t0\t1\t{grid.base_mva:.12g}\t1\t{pg:.12g}\t0;")
    out.append("];")
    out.append("")
    out.append("mpc.branch = [")
    for br in grid.branches:
        x = 1.0 / br.susceptance
        out.append(
            f"\t{numeric[br.from_bus]}\t{numeric[br.to_bus]}\t0\t{x:.12g}\t0\t0\t0\t0\t0\t0"
            f"\t{1 if br.connected else 0}\t-360\t360;"
        )
    out.append("];")
    out.append("")
    return "\n".join(out)


def load_case(path: str | Path) -> Grid:
    """Load a MATPOWER case from disk; the grid is named after the file stem."""
    p = Path(path)
    return parse_matpower(p.read_text(), name=p.stem)


def bundled_case_path(name: str) -> Path:
    """Path of a case file shipped with the package (e.g. ``case14``)."""
    return Path(str(resources.files("topogrid") / "cases" / f"{name}.m"))


def bundled_case(name: str) -> Grid:
    return parse_matpower(bundled_case_path(name).read_text(), name=name)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: reference preparation, change set, contingencies.

    ``reference_changes`` are applied to the loaded case first and define
    the reference topology; ``changes`` are the action under study.
    """

    version: int
    grid_path: str | None
    reference_changes: tuple[TopologyChange, ...]
    changes: tuple[TopologyChange, ...]
    contingencies: tuple[str, ...]
    tolerance: float | None = None

    def validate_ids(self, grid: Grid) -> None:
        """Raise :class:`UnknownId` for references absent from the grid."""
        for change in self.reference_changes + self.changes:
            if isinstance(change, (Disconnect, Reconnect)):
                if not grid.has_branch(change.branch):
                    raise UnknownId(f"unknown branch {change.branch}")
            elif isinstance(change, (Split, Merge)):
                if not grid.has_substation(change.substation):
                    raise UnknownId(f"unknown substation {change.substation}")
                if isinstance(change, Split):
                    for term in change.busbar_2:
                        if term.kind == "branch" and not grid.has_branch(term.branch):
                            raise UnknownId(f"unknown branch {term.branch} in split terminal")
        for branch in self.contingencies:
            if not grid.has_branch(branch):
                raise UnknownId(f"unknown contingency branch {branch}")


def _parse_terminal(record, where: str) -> Terminal:
    if isinstance(record, dict) and record.get("injection"):
        return Terminal.injection()
    if isinstance(record, dict) and "branch" in record and "end" in record:
        if record["end"] not in ("from", "to"):
            raise SchemaError(f"{where}: terminal end must be 'from' or 'to'")
        return Terminal.branch_end(str(record["branch"]), record["end"])
    raise SchemaError(f"{where}: terminal must be {{branch, end}} or {{injection: true}}")


def _parse_change(record, where: str) -> TopologyChange:
    if not isinstance(record, dict) or "kind" not in record:
        raise SchemaError(f"{where}: change must be an object with a 'kind'")
    kind = record["kind"]
    if kind == "disconnect":
        if "branch" not in record:
            raise SchemaError(f"{where}: disconnect needs 'branch'")
        return Disconnect(str(record["branch"]))
    if kind == "reconnect":
        if "branch" not in record:
            raise SchemaError(f"{where}: reconnect needs 'branch'")
        return Reconnect(str(record["branch"]))
    if kind == "split":
        if "substation" not in record or "busbar_2" not in record:
            raise SchemaError(f"{where}: split needs 'substation' and 'busbar_2'")
        terms = frozenset(
            _parse_terminal(t, f"{where}.busbar_2[{i}]")
            for i, t in enumerate(record["busbar_2"])
        )
        return Split(substation=str(record["substation"]), busbar_2=terms)
    if kind == "merge":
        if "substation" not in record:
            raise SchemaError(f"{where}: merge needs 'substation'")
        return Merge(str(record["substation"]))
    raise SchemaError(f"{where}: unknown change kind {kind!r}")


def load_scenario(text: str, grid: Grid | None = None) -> Scenario:
    """Parse a scenario JSON document; optionally validate ids against a grid."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be a JSON object")
    if "version" not in doc:
        raise SchemaError("scenario must carry a 'version' field")
    if doc["version"] != SCENARIO_VERSION:
        raise SchemaError(f"unsupported scenario version {doc['version']!r}")

    changes = tuple(
        _parse_change(c, f"changes[{i}]") for i, c in enumerate(doc.get("changes", []))
    )
    reference = tuple(
        _parse_change(c, f"reference_changes[{i}]")
        for i, c in enumerate(doc.get("reference_changes", []))
    )
    contingencies = doc.get("contingencies", [])
    if not isinstance(contingencies, list):
        raise SchemaError("'contingencies' must be a list of branch ids")
    options = doc.get("options", {})
    if not isinstance(options, dict):
        raise SchemaError("'options' must be an object")
    tolerance = options.get("tolerance")
    if tolerance is not None:
        tolerance = float(tolerance)
        if tolerance <= 0:
            raise SchemaError("options.tolerance must be positive")

    scenario = Scenario(
        version=doc["version"],
        grid_path=doc.get("grid"),
        reference_changes=reference,
        changes=changes,
        contingencies=tuple(str(c) for c in contingencies),
        tolerance=tolerance,
    )
    if grid is not None:
        scenario.validate_ids(grid)
    return scenario


# -- delimited output --------------------------------------------------------

FLOW_HEADER = ["case", "branch", "method", "flow", "abs_diff"]
TIMING_HEADER = ["case", "method", "seconds"]


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_flow_table(path: str | Path, rows: Iterable[Sequence]) -> None:
    """Rows of (case, branch, method, flow, abs_diff)."""
    write_csv(path, FLOW_HEADER, rows)


def write_timing_table(path: str | Path, rows: Iterable[Sequence]) -> None:
    """Rows of (case, method, seconds)."""
    write_csv(path, TIMING_HEADER, rows)
