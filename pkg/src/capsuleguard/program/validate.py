from __future__ import annotations

import math
from dataclasses import dataclass

from .ir import (
    AGG_FUNCS,
    COMPARATORS,
    AggAll,
    Assign,
    BranchJoin,
    DropColumns,
    FilterGroupsMinSize,
    FilterRows,
    GroupAgg,
    HashColumn,
    Join,
    Laplace,
    Output,
    ProgramIR,
    Project,
    ReadCapsule,
)


@dataclass(frozen=True)
class Diagnostic:
    stmt: int
    code: str
    message: str

    def render(self) -> str:
        return f"#{self.stmt} {self.code}: {self.message}"

    def to_dict(self) -> dict:
        return {"stmt": self.stmt, "code": self.code, "message": self.message}


def _expr_problems(e) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    if isinstance(e, ReadCapsule) and not e.capsule_id:
        out.append(("BadArgument", "empty capsule id"))
    elif isinstance(e, FilterRows) and e.interval.is_empty:
        out.append(("BadArgument", f"empty filter interval {e.interval}"))
    elif isinstance(e, Project) and not e.columns:
        out.append(("BadArgument", "projection keeps no columns"))
    elif isinstance(e, (Project, DropColumns)) and len(set(e.columns)) != len(e.columns):
        out.append(("BadArgument", "repeated column"))
    elif isinstance(e, DropColumns) and not e.columns:
        out.append(("BadArgument", "drop of no columns"))
    elif isinstance(e, GroupAgg):
        cols = [c for c, _ in e.aggs]
        if not e.keys:
            out.append(("BadArgument", "groupby needs at least one key"))
        if not e.aggs:
            out.append(("BadArgument", "agg needs at least one column"))
        if len(set(cols)) != len(cols) or set(cols) & set(e.keys):
            out.append(("BadArgument", "aggregated columns must be distinct and not keys"))
        for _, f in e.aggs:
            if f not in AGG_FUNCS:
                out.append(("BadArgument", f"unknown aggregation {f!r}"))
    elif isinstance(e, FilterGroupsMinSize) and e.k < 1:
        out.append(("BadArgument", "min_size must be >= 1"))
    elif isinstance(e, AggAll) and e.func not in AGG_FUNCS:
        out.append(("BadArgument", f"unknown aggregation {e.func!r}"))
    elif isinstance(e, Join) and not e.on:
        out.append(("BadArgument", "join needs at least one key"))
    elif isinstance(e, Laplace):
        if not (e.epsilon > 0 and math.isfinite(e.epsilon)):
            out.append(("BadArgument", "laplace epsilon must be positive"))
        if not 0 <= e.delta <= 1:
            out.append(("BadArgument", "laplace delta must lie in [0, 1]"))
        if not (e.sensitivity > 0 and math.isfinite(e.sensitivity)):
            out.append(("BadArgument", "laplace sensitivity must be positive"))
    elif isinstance(e, BranchJoin) and e.cond.cmp not in COMPARATORS:
        out.append(("BadArgument", f"unknown comparator {e.cond.cmp!r}"))
    elif isinstance(e, HashColumn) and not e.column:
        out.append(("BadArgument", "empty column name"))
    return out


def validate(ir: ProgramIR) -> list[Diagnostic]:
    """Check the structural invariants of ``ir``; an empty list means valid."""
    diags: list[Diagnostic] = []
    assigned: set[str] = set()
    outputs = 0
    for i, s in enumerate(ir.statements):
        if isinstance(s, Assign):
            for v in s.expr.uses():
                if v not in assigned:
                    diags.append(Diagnostic(i, "UseBeforeAssign", f"{v!r} used before assignment"))
            for code, msg in _expr_problems(s.expr):
                diags.append(Diagnostic(i, code, msg))
            if s.var in assigned:
                diags.append(Diagnostic(i, "DuplicateAssign", f"{s.var!r} assigned more than once"))
            assigned.add(s.var)
        elif isinstance(s, Output):
            outputs += 1
            if s.var not in assigned:
                diags.append(Diagnostic(i, "UnknownOutput", f"output of unassigned {s.var!r}"))
        else:
            diags.append(Diagnostic(i, "BadStatement", f"not a statement: {s!r}"))
    if outputs == 0:
        diags.append(Diagnostic(len(ir.statements), "NoOutput", "program has no output statement"))
    return diags
