"""Straight-line dataflow IR for analyst programs.

Every expression node names its operator through ``op``; the analyzer and
executor resolve that name in a :class:`~capsuleguard.analyzer.stubs.StubRegistry`,
so built-in operators and user stubs go through the same dispatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, ClassVar, Union

from ..errors import SemanticError
from ..policy.model import INF, Interval, format_number

AGG_FUNCS = ("sum", "mean", "count")


@dataclass(frozen=True)
class ReadCapsule:
    capsule_id: str
    op: ClassVar[str] = "read_capsule"

    def uses(self) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class FilterRows:
    src: str
    column: str
    interval: Interval
    op: ClassVar[str] = "filter_rows"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class Project:
    src: str
    columns: tuple[str, ...]
    op: ClassVar[str] = "project"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class DropColumns:
    src: str
    columns: tuple[str, ...]
    op: ClassVar[str] = "drop_columns"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class HashColumn:
    src: str
    column: str
    op: ClassVar[str] = "hash_column"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class GroupAgg:
    src: str
    keys: tuple[str, ...]
    aggs: tuple[tuple[str, str], ...]  # (column, func), sorted by column
    op: ClassVar[str] = "group_agg"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class FilterGroupsMinSize:
    src: str
    k: int
    op: ClassVar[str] = "filter_groups"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class AggAll:
    src: str
    column: str
    func: str
    op: ClassVar[str] = "agg_all"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class Join:
    left: str
    right: str
    on: tuple[str, ...]
    op: ClassVar[str] = "join"

    def uses(self) -> tuple[str, ...]:
        return (self.left, self.right)


@dataclass(frozen=True)
class Laplace:
    src: str
    epsilon: float
    delta: float
    sensitivity: float
    op: ClassVar[str] = "laplace"

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


@dataclass(frozen=True)
class Operand:
    """Literal value or variable reference inside a branch condition."""

    var: str | None = None
    value: float | str | None = None

    def render(self) -> str:
        if self.var is not None:
            return self.var
        if isinstance(self.value, str):
            return json.dumps(self.value)
        return format_number(self.value)


COMPARATORS = ("==", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Cond:
    left: Operand
    cmp: str
    right: Operand

    def render(self) -> str:
        return f"{self.left.render()} {self.cmp} {self.right.render()}"

    def vars(self) -> tuple[str, ...]:
        return tuple(o.var for o in (self.left, self.right) if o.var is not None)


@dataclass(frozen=True)
class BranchJoin:
    """Merge point of an if/else: ``then_var`` when ``cond`` holds else ``else_var``."""

    cond: Cond
    then_var: str
    else_var: str
    op: ClassVar[str] = "branch_join"

    def uses(self) -> tuple[str, ...]:
        return (self.then_var, self.else_var, *self.cond.vars())


@dataclass(frozen=True)
class StubCall:
    """Call of a registered extension operator on one source variable."""

    name: str
    src: str
    args: tuple[Any, ...] = ()

    @property
    def op(self) -> str:
        return self.name

    def uses(self) -> tuple[str, ...]:
        return (self.src,)


Expr = Union[
    ReadCapsule,
    FilterRows,
    Project,
    DropColumns,
    HashColumn,
    GroupAgg,
    FilterGroupsMinSize,
    AggAll,
    Join,
    Laplace,
    BranchJoin,
    StubCall,
]


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Output:
    var: str


Statement = Union[Assign, Output]


@dataclass(frozen=True)
class ProgramIR:
    statements: tuple[Statement, ...] = field(default_factory=tuple)

    def outputs(self) -> tuple[str, ...]:
        return tuple(s.var for s in self.statements if isinstance(s, Output))

    def capsule_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for s in self.statements:
            if isinstance(s, Assign) and isinstance(s.expr, ReadCapsule):
                seen[s.expr.capsule_id] = None
        return tuple(seen)

    def to_json(self) -> str:
        return dumps_canonical(ir_to_data(self))

    @classmethod
    def from_json(cls, text: str) -> ProgramIR:
        return ir_from_data(json.loads(text))


# -- canonical JSON ------------------------------------------------------------


def dumps_canonical(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def _num(x: float) -> Any:
    # JSON has no infinities; encode them as the policy-grammar spellings.
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    return x


def _unnum(x: Any) -> float:
    if x == "inf":
        return INF
    if x == "-inf":
        return -INF
    return float(x)


def interval_to_data(iv: Interval) -> dict[str, Any]:
    return {
        "lower": _num(iv.lower),
        "upper": _num(iv.upper),
        "lower_closed": iv.lower_closed,
        "upper_closed": iv.upper_closed,
    }


def interval_from_data(d: dict[str, Any]) -> Interval:
    return Interval(_unnum(d["lower"]), _unnum(d["upper"]), d["lower_closed"], d["upper_closed"])


def _operand_to_data(o: Operand) -> dict[str, Any]:
    return {"var": o.var} if o.var is not None else {"value": o.value}


def _operand_from_data(d: dict[str, Any]) -> Operand:
    return Operand(var=d["var"]) if "var" in d else Operand(value=d["value"])


def expr_to_data(e: Expr) -> dict[str, Any]:
    if isinstance(e, ReadCapsule):
        return {"op": e.op, "capsule_id": e.capsule_id}
    if isinstance(e, FilterRows):
        return {"op": e.op, "src": e.src, "column": e.column, "interval": interval_to_data(e.interval)}
    if isinstance(e, (Project, DropColumns)):
        return {"op": e.op, "src": e.src, "columns": list(e.columns)}
    if isinstance(e, HashColumn):
        return {"op": e.op, "src": e.src, "column": e.column}
    if isinstance(e, GroupAgg):
        return {"op": e.op, "src": e.src, "keys": list(e.keys), "aggs": [list(a) for a in e.aggs]}
    if isinstance(e, FilterGroupsMinSize):
        return {"op": e.op, "src": e.src, "k": e.k}
    if isinstance(e, AggAll):
        return {"op": e.op, "src": e.src, "column": e.column, "func": e.func}
    if isinstance(e, Join):
        return {"op": e.op, "left": e.left, "right": e.right, "on": list(e.on)}
    if isinstance(e, Laplace):
        return {
            "op": e.op,
            "src": e.src,
            "epsilon": e.epsilon,
            "delta": e.delta,
            "sensitivity": e.sensitivity,
        }
    if isinstance(e, BranchJoin):
        return {
            "op": e.op,
            "cond": {
                "left": _operand_to_data(e.cond.left),
                "cmp": e.cond.cmp,
                "right": _operand_to_data(e.cond.right),
                "desc": e.cond.render(),
            },
            "then_var": e.then_var,
            "else_var": e.else_var,
        }
    if isinstance(e, StubCall):
        return {"op": "stub", "name": e.name, "src": e.src, "args": list(e.args)}
    raise TypeError(f"not an IR expression: {e!r}")


def expr_from_data(d: dict[str, Any]) -> Expr:
    op = d["op"]
    if op == "read_capsule":
        return ReadCapsule(d["capsule_id"])
    if op == "filter_rows":
        return FilterRows(d["src"], d["column"], interval_from_data(d["interval"]))
    if op == "project":
        return Project(d["src"], tuple(d["columns"]))
    if op == "drop_columns":
        return DropColumns(d["src"], tuple(d["columns"]))
    if op == "hash_column":
        return HashColumn(d["src"], d["column"])
    if op == "group_agg":
        return GroupAgg(d["src"], tuple(d["keys"]), tuple(tuple(a) for a in d["aggs"]))
    if op == "filter_groups":
        return FilterGroupsMinSize(d["src"], int(d["k"]))
    if op == "agg_all":
        return AggAll(d["src"], d["column"], d["func"])
    if op == "join":
        return Join(d["left"], d["right"], tuple(d["on"]))
    if op == "laplace":
        return Laplace(d["src"], float(d["epsilon"]), float(d["delta"]), float(d["sensitivity"]))
    if op == "branch_join":
        c = d["cond"]
        cond = Cond(_operand_from_data(c["left"]), c["cmp"], _operand_from_data(c["right"]))
        return BranchJoin(cond, d["then_var"], d["else_var"])
    if op == "stub":
        return StubCall(d["name"], d["src"], tuple(d["args"]))
    raise SemanticError(f"unknown IR op {op!r}")


def ir_to_data(ir: ProgramIR) -> dict[str, Any]:
    stmts: list[dict[str, Any]] = []
    for s in ir.statements:
        if isinstance(s, Assign):
            stmts.append({"kind": "assign", "var": s.var, "expr": expr_to_data(s.expr)})
        else:
            stmts.append({"kind": "output", "var": s.var})
    return {"statements": stmts}


def ir_from_data(data: dict[str, Any]) -> ProgramIR:
    stmts: list[Statement] = []
    for s in data["statements"]:
        if s["kind"] == "assign":
            stmts.append(Assign(s["var"], expr_from_data(s["expr"])))
        elif s["kind"] == "output":
            stmts.append(Output(s["var"]))
        else:
            raise SemanticError(f"unknown statement kind {s['kind']!r}")
    return ProgramIR(tuple(stmts))
