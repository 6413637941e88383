"""
Report models and artifact writers

Every subcommand produces one pydantic report. JSON output is the model dump;
CSV output is a fixed set of tables per report with floats written to 12
significant digits.
"""

import csv
import math
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter

from .errors import ConfigError
from .game import Challenger, SaddleReport
from .pde import ValueSurface

SCHEMA_VERSION = 1

Table = Tuple[List[str], List[List[object]]]


def fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else format(float(value), ".12g")
    return str(value)


def finite_or_none(value: float) -> Optional[float]:
    return None if value is None or not math.isfinite(value) else float(value)


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class _Report(BaseModel):
    subcommand: str = ""
    schema_version: int = SCHEMA_VERSION
    seed: Optional[int] = None
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed_checks(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def csv_tables(self) -> Dict[str, Table]:
        return {}

    def _check_table(self) -> Table:
        return ["check", "passed", "detail"], [[c.name, c.passed, c.detail] for c in self.checks]


class PriceReport(_Report):
    subcommand: Literal["price"] = "price"
    matrix: List[List[float]]
    x0: float
    y0: int
    price: float
    prices: Dict[int, float]
    boundary: Optional[Dict[int, List[Optional[float]]]] = None
    oracle_price: Optional[float] = None

    def csv_tables(self) -> Dict[str, Table]:
        rows = [[y, self.x0, p] for y, p in sorted(self.prices.items())]
        return {"price.csv": (["regime", "x0", "price"], rows)}


class WorstCaseReport(_Report):
    subcommand: Literal["worstcase"] = "worstcase"
    monotonicity: str
    extremal_matrix: Optional[List[List[float]]] = None
    constant_prices: Optional[Dict[int, float]] = None
    hjb_prices: Dict[int, float]
    sup_diff: Optional[float] = None
    rate_field_constant: bool

    def csv_tables(self) -> Dict[str, Table]:
        rows = [
            [y, (self.constant_prices or {}).get(y), p] for y, p in sorted(self.hjb_prices.items())
        ]
        tables = {"worstcase.csv": (["regime", "constant_price", "hjb_price"], rows)}
        if self.extremal_matrix is not None:
            entries = [
                [i + 1, j + 1, rate] for i, row in enumerate(self.extremal_matrix) for j, rate in enumerate(row)
            ]
            tables["extremal_matrix.csv"] = (["row", "col", "rate"], entries)
        return tables


class BoundaryReport(_Report):
    subcommand: Literal["boundary"] = "boundary"
    matrix: List[List[float]]
    t: List[float]
    boundaries: Dict[int, List[Optional[float]]]

    def csv_tables(self) -> Dict[str, Table]:
        rows = [
            [t, y, curve[k]] for k, t in enumerate(self.t) for y, curve in sorted(self.boundaries.items())
        ]
        return {"boundary.csv": (["t", "regime", "s_star"], rows)}


class MatrixPrice(BaseModel):
    kind: str
    matrix: List[List[float]]
    value: float


class DominanceReport(_Report):
    subcommand: Literal["verify-extremal"] = "verify-extremal"
    extremal_matrix: List[List[float]]
    extremal_price: float
    worst_margin: Optional[float] = None
    margins: List[MatrixPrice] = Field(default_factory=list)
    brute_force_min: Optional[float] = None
    brute_force_argmin: Optional[List[List[float]]] = None
    brute_force_prices: List[MatrixPrice] = Field(default_factory=list)

    def csv_tables(self) -> Dict[str, Table]:
        def rows(items: Sequence[MatrixPrice]) -> List[List[object]]:
            return [[i, item.kind, item.value, _rates_text(item.matrix)] for i, item in enumerate(items)]

        return {
            "dominance.csv": (["index", "kind", "margin", "rates"], rows(self.margins)),
            "brute_force.csv": (["index", "kind", "price", "rates"], rows(self.brute_force_prices)),
        }


class GameReport(_Report):
    subcommand: Literal["game"] = "game"
    saddle: Optional[SaddleReport] = None
    lower_bound_pde: Optional[float] = None
    lower_bound: List[Challenger] = Field(default_factory=list)
    path_summary: Dict[str, float] = Field(default_factory=dict)

    def csv_tables(self) -> Dict[str, Table]:
        header = ["side", "challenger", "value", "std_error", "margin", "allowance", "passed"]
        rows: List[List[object]] = []
        if self.saddle is not None:
            c = self.saddle.center
            rows.append(["center", "extremal / extremal boundary", c.value, c.std_error, 0.0, 0.0, True])
            for side, group in (("left", self.saddle.left_challengers), ("right", self.saddle.right_challengers)):
                rows.extend(_challenger_row(side, ch) for ch in group)
        rows.extend(_challenger_row("lower_bound", ch) for ch in self.lower_bound)
        tables = {"game.csv": (header, rows)}
        if self.path_summary:
            tables["path_summary.csv"] = (["statistic", "value"], [[k, v] for k, v in self.path_summary.items()])
        return tables


class MomentRow(BaseModel):
    q: float
    k_growth: float
    horizon: float
    empirical: float
    std_error: float
    bound: Optional[float]
    log10_bound: float
    passed: bool


class MomentsReport(_Report):
    subcommand: Literal["moments"] = "moments"
    rows: List[MomentRow]

    def csv_tables(self) -> Dict[str, Table]:
        header = ["q", "k_growth", "horizon", "empirical", "std_error", "bound", "log10_bound", "passed"]
        body = [[r.q, r.k_growth, r.horizon, r.empirical, r.std_error, r.bound, r.log10_bound, r.passed] for r in self.rows]
        return {"moments.csv": (header, body)}


AnyReport = Annotated[
    Union[PriceReport, WorstCaseReport, BoundaryReport, DominanceReport, GameReport, MomentsReport],
    Field(discriminator="subcommand"),
]
_report_adapter = TypeAdapter(AnyReport)


def _rates_text(matrix: List[List[float]]) -> str:
    m = len(matrix)
    plus = [matrix[i][i + 1] for i in range(m - 1)]
    minus = [matrix[i + 1][i] for i in range(m - 1)]
    return "plus=" + ";".join(fmt(r) for r in plus) + " minus=" + ";".join(fmt(r) for r in minus)


def _challenger_row(side: str, ch: Challenger) -> List[object]:
    return [side, ch.description, ch.value, ch.std_error, ch.margin, ch.allowance, ch.passed]


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def surface_rows(surface: ValueSurface) -> List[List[object]]:
    """One row per (x, regime, t) node"""
    grid = surface.grid
    rows = []
    for n, t in enumerate(grid.t_nodes):
        for y in range(surface.problem.m):
            for i, x in enumerate(grid.x_nodes):
                rows.append([x, y + 1, t, surface.v[i, y, n], bool(surface.exercise_mask[i, y, n])])
    return rows


def write_surface_csv(surface: ValueSurface, path: Path) -> Path:
    return write_csv(path, ["x", "regime", "t", "v", "exercised"], surface_rows(surface))


def write_report(report: _Report, out_dir: Path, fmt_name: str = "json") -> List[Path]:
    """Write checks plus the report's tables (csv) or the full model dump (json)"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report.subcommand.replace("-", "_")
    if fmt_name == "json":
        path = out_dir / f"{stem}.json"
        path.write_text(report.model_dump_json(indent=2) + "\n")
        return [path]
    if fmt_name != "csv":
        raise ConfigError(f"unknown output format {fmt_name!r}", field_path="--format")
    written = [write_csv(out_dir / name, header, rows) for name, (header, rows) in report.csv_tables().items()]
    header, rows = report._check_table()
    written.append(write_csv(out_dir / "checks.csv", header, rows))
    return written


def read_report(path: Path) -> _Report:
    """Parse a JSON report written by write_report"""
    report = _report_adapter.validate_json(Path(path).read_text())
    if report.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {report.schema_version}", field_path="schema_version")
    return report
