"""In-memory tables and their CSV encoding.

Column types are inferred per column: ``int`` if every cell parses as an
integer, else ``float`` if every cell parses as a finite decimal, else
``string``.  A sidecar schema overrides inference.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from typing import Any

from ..errors import CsvMalformed

TYPES = ("int", "float", "string")
_INT = re.compile(r"[+-]?\d+\Z")
_FLOAT = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


@dataclass(frozen=True)
class Table:
    schema: tuple[tuple[str, str], ...]
    rows: tuple[tuple[Any, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "schema", tuple((str(n), str(t)) for n, t in self.schema))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        names = self.columns
        if len(set(names)) != len(names):
            raise CsvMalformed("duplicate column names", {"columns": list(names)})
        for _, t in self.schema:
            if t not in TYPES:
                raise CsvMalformed(f"unknown column type {t!r}")
        for i, r in enumerate(self.rows):
            if len(r) != len(self.schema):
                raise CsvMalformed(f"row {i} has {len(r)} cells, expected {len(self.schema)}")
            for (name, t), v in zip(self.schema, r):
                if not _conforms(v, t):
                    raise CsvMalformed(f"row {i}: {name}={v!r} is not {t}")

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.schema)

    def column(self, name: str) -> list[Any]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> bytes:
        return write_csv(self)

    @classmethod
    def from_csv(cls, data: bytes | str, schema: Any = None) -> Table:
        return read_csv(data, schema)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": [{"name": n, "type": t} for n, t in self.schema],
            "rows": [list(r) for r in self.rows],
        }


def _conforms(v: Any, t: str) -> bool:
    if t == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if t == "float":
        return isinstance(v, float) or (isinstance(v, int) and not isinstance(v, bool))
    return isinstance(v, str)


def format_cell(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(table: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([format_cell(v) for v in r])
    return buf.getvalue().encode("utf-8")


def parse_sidecar(schema: Any) -> dict[str, str]:
    """Accept ``{"col": "type"}`` or ``{"columns": [{"name", "type"}]}``, as JSON text or data."""
    if isinstance(schema, (bytes, str)):
        try:
            schema = json.loads(schema)
        except ValueError as e:
            raise CsvMalformed(f"sidecar schema is not JSON: {e}") from None
    if isinstance(schema, dict) and "columns" in schema:
        schema = {c["name"]: c["type"] for c in schema["columns"]}
    if not isinstance(schema, dict):
        raise CsvMalformed("sidecar schema must map column names to types")
    for name, t in schema.items():
        if t not in TYPES:
            raise CsvMalformed(f"sidecar type {t!r} for {name!r} is not one of {TYPES}")
    return dict(schema)


def infer_type(cells: list[str]) -> str:
    if cells and all(_INT.match(c) for c in cells):
        return "int"
    if cells and all(_FLOAT.match(c) for c in cells):
        return "float"
    return "string"


def _convert(cell: str, t: str, where: str) -> Any:
    try:
        if t == "int":
            return int(cell)
        if t == "float":
            v = float(cell)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise CsvMalformed(f"{where}: {cell!r} is not {t}") from None
    return cell


def read_csv(data: bytes | str, schema: Any = None) -> Table:
    """Parse RFC 4180 CSV with a header row."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CsvMalformed(f"CSV is not UTF-8: {e}") from None
    try:
        records = list(csv.reader(io.StringIO(data, newline=""), strict=True))
    except csv.Error as e:
        raise CsvMalformed(f"CSV parse error: {e}") from None
    if not records or not records[0]:
        raise CsvMalformed("CSV has no header row")
    header = [h.strip() for h in records[0]]
    if any(not h for h in header):
        raise CsvMalformed("empty column name in header")
    if len(set(header)) != len(header):
        raise CsvMalformed("duplicate column names in header", {"columns": header})
    body = records[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise CsvMalformed(f"line {i}: {len(r)} fields, expected {len(header)}", {"line": i})
    declared = parse_sidecar(schema) if schema is not None else {}
    unknown = set(declared) - set(header)
    if unknown:
        raise CsvMalformed(f"sidecar names unknown column(s) {sorted(unknown)}")
    types = [declared.get(h) or infer_type([r[j] for r in body]) for j, h in enumerate(header)]
    rows = tuple(
        tuple(_convert(c, t, f"line {i} column {h}") for c, t, h in zip(r, types, header))
        for i, r in enumerate(body, start=2)
    )
    return Table(tuple(zip(header, types)), rows)
