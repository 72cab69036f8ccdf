"""Result tables and their CSV/JSON serialization.

Column order is fixed: independent variable, series, statistic, value,
ci_low, ci_high. Floats are written with ``repr`` so files are byte-identical
across runs with the same inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from metiblt.schemas import validate

Row = tuple[float, str, str, float, float | None, float | None]


@dataclass
class Table:
    x_name: str
    rows: list[Row] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return [self.x_name, "series", "statistic", "value", "ci_low", "ci_high"]

    def add(self, x: float, series: str, statistic: str, value: float,
            ci_low: float | None = None, ci_high: float | None = None) -> None:
        self.rows.append((x, series, statistic, value, ci_low, ci_high))

    def select(self, series: str | None = None, statistic: str | None = None) -> dict[float, Row]:
        return {r[0]: r for r in self.rows
                if (series is None or r[1] == series) and (statistic is None or r[2] == statistic)}

    def to_dict(self) -> dict[str, Any]:
        return {"x_name": self.x_name, "meta": self.meta, "columns": self.columns,
                "rows": [[_clean(v) for v in r] for r in self.rows]}


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


def _cell(v) -> str:
    v = _clean(v)
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def to_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def to_json(table: Table) -> str:
    data = table.to_dict()
    validate(data, "table")
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_csv(text: str) -> Table:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    table = Table(header[0])
    for x, series, stat, value, lo, hi in reader:
        table.add(float(x), series, stat, float(value),
                  float(lo) if lo else None, float(hi) if hi else None)
    return table


def emit(table: Table, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Serialize ``table``; write it to ``path`` when given. Returns the text."""
    if not table.rows:
        raise ValueError("refusing to emit an empty table")
    if fmt == "csv":
        text = to_csv(table)
    elif fmt == "json":
        text = to_json(table)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        path = Path(path)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return text
