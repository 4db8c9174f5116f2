"""File formats: series CSV, matrix CSV and CSV/JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .matrix_ops import symmetrize
from .scan import Series


class SeriesFormatError(ValueError):
    """Malformed series file; ``row`` is the 1-based line number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


def parse_series_csv(path) -> list[Series]:
    """Read ``id,values`` rows, ``values`` being ``;``-separated numbers.

    Series may have different lengths.  Duplicate ids, empty or malformed
    values and empty files are rejected with the offending row number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SeriesFormatError(f"{path} is empty")
        if [h.strip() for h in header] != ["id", "values"]:
            raise SeriesFormatError(f"expected header 'id,values', got {','.join(header)!r}", row=1)
        out: list[Series] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SeriesFormatError(f"expected 2 fields, got {len(row)}", row=row_no)
            sid, raw = row[0].strip(), row[1].strip()
            if not sid:
                raise SeriesFormatError("empty id", row=row_no)
            if sid in seen:
                raise SeriesFormatError(f"duplicate id {sid!r}", row=row_no)
            if not raw:
                raise SeriesFormatError(f"empty values for {sid!r}", row=row_no)
            try:
                values = [float(v) for v in raw.split(";")]
            except ValueError:
                raise SeriesFormatError(f"non-numeric value in {sid!r}", row=row_no) from None
            try:
                out.append(Series(sid, np.array(values)))
            except ValueError as exc:
                raise SeriesFormatError(str(exc), row=row_no) from None
            seen.add(sid)
    if not out:
        raise SeriesFormatError(f"{path} contains no series")
    return out


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return "" if x is None else str(x)


def write_series_csv(series, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "values"])
        for x in series:
            writer.writerow([x.id, ";".join(_num(v) for v in x.values)])


def read_matrix_csv(path, tol: float = 1e-8) -> np.ndarray:
    """Square numeric CSV without header, symmetrised (asymmetry up to ``tol``)."""
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    return symmetrize(a, tol=tol)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Report:
    """A table with metadata.

    ``display`` maps a column to a number of decimals; each such column gets
    a rounded ``<name>_display`` twin after the full-precision columns.
    """

    kind: str
    columns: list[str]
    rows: list[list]
    meta: dict = field(default_factory=dict)
    display: dict[str, int] = field(default_factory=dict)

    def table(self) -> tuple[list[str], list[list]]:
        cols = list(self.columns) + [f"{c}_display" for c in self.display]
        pos = [self.columns.index(c) for c in self.display]
        rows = []
        for r in self.rows:
            extra = []
            for p, d in zip(pos, self.display.values()):
                v = r[p]
                extra.append(round(float(v), d) if isinstance(v, (float, np.floating)) and np.isfinite(v) else v)
            rows.append(list(r) + extra)
        return cols, rows


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _header(report: Report) -> dict:
    return {"kind": report.kind, "version": __version__, "meta": _jsonable(report.meta)}


def render_report(report: Report, fmt: str = "csv") -> str:
    """Serialise a report; identical reports give identical text."""
    cols, rows = report.table()
    if fmt == "json":
        doc = _header(report)
        doc["columns"] = cols
        doc["rows"] = [dict(zip(cols, _jsonable(r))) for r in rows]
        return json.dumps(doc, sort_keys=False, indent=2, allow_nan=False) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    head = _header(report)
    buf.write(f"# kind: {head['kind']}\n")
    buf.write(f"# version: {head['version']}\n")
    buf.write(f"# meta: {json.dumps(head['meta'], sort_keys=True, allow_nan=False)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_num(v) for v in r])
    return buf.getvalue()


def write_report(report: Report, path, fmt: str = "csv") -> None:
    text = render_report(report, fmt)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def load_report(path) -> dict:
    """Read a CSV or JSON report back into ``{kind, version, meta, columns, rows}``."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return json.loads(text)
    lines = text.splitlines()
    head = {}
    body = []
    for line in lines:
        if line.startswith("# ") and not body:
            key, _, val = line[2:].partition(": ")
            head[key] = json.loads(val) if key == "meta" else val
        else:
            body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    rows = []
    for r in reader:
        vals = [_parse_cell(c) for c in r]
        vals = [None if isinstance(v, float) and math.isnan(v) else v for v in vals]
        rows.append(dict(zip(cols, vals)))
    return {"kind": head.get("kind"), "version": head.get("version"), "meta": head.get("meta", {}),
            "columns": cols, "rows": rows}
