"""Abstract transfer functions of the built-in operators.

Each function maps an IR node and the analysis environment to the
:class:`AbstractValue` of the assigned variable.
"""

from __future__ import annotations

from dataclasses import replace
from typing import TYPE_CHECKING

from ..errors import AnalysisError, MissingCapsule, SchemaMismatch
from ..policy.model import Interval
from ..program.ir import (
    AggAll,
    BranchJoin,
    DropColumns,
    FilterGroupsMinSize,
    FilterRows,
    GroupAgg,
    HashColumn,
    Join,
    Laplace,
    Project,
    ReadCapsule,
    StubCall,
)
from .domain import AbstractValue, join_values

if TYPE_CHECKING:
    from .analyze import AnalysisEnv


def read_capsule(node: ReadCapsule, env: AnalysisEnv) -> AbstractValue:
    """Fresh per-row value, or the stored evidence of a derived capsule."""
    meta = env.capsules.get(node.capsule_id)
    if meta is None:
        raise MissingCapsule(f"capsule {node.capsule_id!r} is not among the inputs", {"capsule": node.capsule_id})
    if meta.evidence is not None:
        ev = meta.evidence
        if tuple(ev.schema) != tuple(meta.schema):
            raise SchemaMismatch(f"stored evidence of {node.capsule_id!r} does not match its schema")
        # known_rows stays as recorded: it is only exact along row-preserving chains.
        return replace(ev, sources=frozenset({node.capsule_id}))
    return AbstractValue.fresh(node.capsule_id, tuple(meta.schema), meta.row_count)


def _numeric_column(v: AbstractValue, column: str, what: str) -> None:
    v.require_columns([column], what)
    if column in v.hashed:
        raise SchemaMismatch(f"{what}: column {column!r} is hashed and no longer numeric")


def filter_rows(node: FilterRows, env: AnalysisEnv) -> AbstractValue:
    """Intersect the enforced interval; the row count becomes unknown."""
    v = env.value(node.src)
    _numeric_column(v, node.column, "filter")
    filtered = dict(v.filtered)
    if node.column in v.verbatim:
        filtered[node.column] = v.bound(node.column).intersect(node.interval)
    # A filter on an aggregate or noised cell says nothing about input rows.
    # Keeping rows never adds contributors to a cell, so the floor survives.
    return replace(v, filtered=filtered, used=v.used | {node.column}, known_rows=None)


def project(node: Project, env: AnalysisEnv) -> AbstractValue:
    v = env.value(node.src)
    v.require_columns(node.columns, "projection")
    return v.reshape(tuple(node.columns))


def drop_columns(node: DropColumns, env: AnalysisEnv) -> AbstractValue:
    v = env.value(node.src)
    v.require_columns(node.columns, "drop")
    keep = tuple(c for c in v.schema if c not in node.columns)
    if not keep:
        raise SchemaMismatch("drop removes every column")
    return v.reshape(keep)


def hash_column(node: HashColumn, env: AnalysisEnv) -> AbstractValue:
    v = env.value(node.src)
    v.require_columns([node.column], "hash")
    return replace(
        v,
        columns=v.columns - {node.column},
        redacted=v.redacted | {node.column},
        used=v.used | {node.column},
        verbatim=v.verbatim - {node.column},
    )


def group_agg(node: GroupAgg, env: AnalysisEnv) -> AbstractValue:
    v = env.value(node.src)
    v.require_columns(node.keys, "groupby")
    for col, func in node.aggs:
        if func == "count":
            v.require_columns([col], "agg")
        else:
            _numeric_column(v, col, f"agg {func}")
    schema = tuple(node.keys) + tuple(c for c, _ in node.aggs)
    return v.reshape(
        schema,
        used=v.used | set(schema),
        known_rows=None,
        aggregated=True,
        is_scalarized=False,
        verbatim=v.verbatim & set(node.keys),
    )


def filter_groups(node: FilterGroupsMinSize, env: AnalysisEnv) -> AbstractValue:
    """Suppress groups with fewer than ``k`` contributors."""
    v = env.value(node.src)
    if v.dp_spent is not None:
        # Suppression reads exact group sizes, which the noise does not cover.
        raise AnalysisError(
            "filter_groups after laplace would consult exact group sizes; apply it before adding noise"
        )
    return replace(v, agg_floor=max(v.agg_floor, node.k), known_rows=None)


def agg_all(node: AggAll, env: AnalysisEnv) -> AbstractValue:
    v = env.value(node.src)
    if node.func == "count":
        v.require_columns([node.column], "agg_all")
    else:
        _numeric_column(v, node.column, f"agg_all {node.func}")
    floor = v.agg_floor
    rows = None
    if v.known_rows is not None:
        # With an exact row count every input row feeds the single output cell.
        floor = max(floor, v.known_rows)
        rows = 1 if v.known_rows > 0 else 0
    return v.reshape(
        (node.column,),
        used=v.used | {node.column},
        agg_floor=floor,
        known_rows=rows,
        aggregated=True,
        is_scalarized=True,
        verbatim=frozenset(),
    )


def join(node: Join, env: AnalysisEnv) -> AbstractValue:
    left, right = env.value(node.left), env.value(node.right)
    left.require_columns(node.on, "join (left)")
    right.require_columns(node.on, "join (right)")
    shared = (left.origin & right.origin) - set(node.on)
    if shared:
        raise SchemaMismatch(
            f"join inputs share non-key column(s) {sorted(shared)}; drop or rename them first",
            {"shared": sorted(shared)},
        )
    schema = tuple(left.schema) + tuple(c for c in right.schema if c not in node.on)
    columns = left.columns | right.columns
    exact_keys = {k for k in node.on if k in left.verbatim and k in right.verbatim}
    filtered: dict[str, Interval] = {}
    for c in set(left.filtered) | set(right.filtered):
        lb, rb = left.bound(c), right.bound(c)
        if lb is None or rb is None:
            filtered[c] = lb if lb is not None else rb
        elif c in exact_keys:
            # Matched rows share the key value, so both bounds apply to both.
            filtered[c] = lb.intersect(rb)
        else:
            filtered[c] = lb.hull(rb)
    verbatim = (left.verbatim | right.verbatim) - (set(node.on) - exact_keys)
    return AbstractValue(
        sources=left.sources | right.sources,
        schema=schema,
        columns=columns,
        origin=left.origin | right.origin,
        redacted=(left.redacted | right.redacted) - columns,
        filtered=filtered,
        used=left.used | right.used | set(node.on),
        agg_floor=0,
        known_rows=None,
        dp_spent=None,
        aggregated=False,
        is_scalarized=False,
        verbatim=frozenset(verbatim),
    )


def laplace(node: Laplace, env: AnalysisEnv) -> AbstractValue:
    """Pure epsilon-DP noise on aggregated numeric cells."""
    v = env.value(node.src)
    v = replace(v, verbatim=frozenset())
    if not v.aggregated:
        # Noise on raw rows still releases every string cell verbatim.
        return v
    spent = (float(node.epsilon), 0.0)
    if v.dp_spent is not None and v.dp_spent <= spent:
        # Re-noising an already private value keeps the stronger guarantee.
        spent = v.dp_spent
    return replace(v, dp_spent=spent)


def branch_join(node: BranchJoin, env: AnalysisEnv) -> AbstractValue:
    """Join of both branches, tainted by whatever the condition reads."""
    out = join_values(env.value(node.then_var), env.value(node.else_var))
    for var in node.cond.vars():
        c = env.value(var)
        if not c.is_scalarized or len(c.schema) != 1:
            raise SchemaMismatch(f"branch condition variable {var!r} must be a single aggregate value")
        filtered = dict(out.filtered)
        for col in set(c.filtered) | set(out.filtered):
            a, b = out.bound(col), c.bound(col)
            iv = b if a is None else a if b is None else a.hull(b)
            filtered[col] = iv
        dp = None
        if out.dp_spent is not None and c.dp_spent is not None:
            # Choosing a branch on a noised value composes sequentially.
            dp = (out.dp_spent[0] + c.dp_spent[0], out.dp_spent[1] + c.dp_spent[1])
        out = replace(
            out,
            sources=out.sources | c.sources,
            origin=out.origin | c.origin,
            filtered={k: iv for k, iv in filtered.items() if not iv.is_top},
            used=out.used | c.used | set(c.schema),
            dp_spent=dp,
        )
    return out


def stub_call(node: StubCall, env: AnalysisEnv) -> AbstractValue:
    """Generic transfer of a declarative user stub."""
    desc = env.registry.lookup(node.name)
    if desc.transfer is not None and not desc.builtin:
        return desc.transfer(node, env)
    args = bind_stub_args(node, desc.params)
    v = env.value(node.src)
    tmp = _Overlay(env, {node.src: v})
    cur = node.src
    if desc.row_filter is not None:
        col, lo, hi = (args[p] for p in desc.row_filter)
        tmp.bind("__stub", filter_rows(FilterRows(cur, str(col), Interval.closed(float(lo), float(hi))), tmp))
        cur = "__stub"
    for p in desc.drops:
        tmp.bind("__stub", drop_columns(DropColumns(cur, (str(args[p]),)), tmp))
        cur = "__stub"
    for p in desc.hashes:
        tmp.bind("__stub", hash_column(HashColumn(cur, str(args[p])), tmp))
        cur = "__stub"
    return tmp.value(cur)


def bind_stub_args(node: StubCall, params: tuple[str, ...]) -> dict[str, object]:
    if len(node.args) != len(params):
        raise SchemaMismatch(
            f"{node.name} expects {len(params)} argument(s), got {len(node.args)}",
            {"params": list(params)},
        )
    return dict(zip(params, node.args))


class _Overlay:
    """Environment view with a few scratch bindings on top."""

    def __init__(self, base, extra: dict[str, AbstractValue]) -> None:
        self.base = base
        self.extra = dict(extra)
        self.capsules = base.capsules
        self.registry = base.registry

    def bind(self, var: str, value: AbstractValue) -> None:
        self.extra[var] = value

    def value(self, var: str) -> AbstractValue:
        if var in self.extra:
            return self.extra[var]
        return self.base.value(var)


BUILTIN_TRANSFERS = {
    "read_capsule": read_capsule,
    "filter_rows": filter_rows,
    "project": project,
    "drop_columns": drop_columns,
    "hash_column": hash_column,
    "group_agg": group_agg,
    "filter_groups": filter_groups,
    "agg_all": agg_all,
    "join": join,
    "laplace": laplace,
    "branch_join": branch_join,
}
