"""Concrete interpreter for ProgramIR.

Every intermediate table is a :class:`Frame` that also records, for each
row, the set of input rows it was computed from, and for each column, which
input columns feed it.  That bookkeeping is what the oracle inspects; the
released output is plain :class:`Table` data.
"""

from __future__ import annotations

import hashlib
import operator
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any

from ..errors import (
    EmptyGroupDomain,
    ExecutionError,
    MissingColumn,
    SchemaMismatch,
    TypeMismatch,
)
from ..policy.model import Interval
from ..program.ir import (
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
    Operand,
    Output,
    ProgramIR,
    Project,
    ReadCapsule,
    StubCall,
)
from ..program.validate import validate
from .laplace import laplace_sample, make_rng, scale_for
from .table import Table, format_cell

Ref = tuple[str, str]  # (capsule id, column)
RowRef = tuple[str, int]  # (capsule id, row index)


@dataclass(frozen=True)
class Frame:
    names: tuple[str, ...]
    types: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]
    prov: tuple[frozenset[RowRef], ...]
    raw: tuple[frozenset[Ref], ...]  # input columns whose values appear verbatim or aggregated
    lineage: tuple[frozenset[Ref], ...]  # every input column a column derives from
    control: frozenset[Ref] = frozenset()  # input columns that decided which rows exist
    origin: frozenset[str] = frozenset()
    scalar: bool = False

    def index(self, column: str, err: type[ExecutionError] = MissingColumn) -> int:
        try:
            return self.names.index(column)
        except ValueError:
            raise err(
                f"column {column!r} not present (available: {', '.join(self.names)})",
                {"column": column, "available": list(self.names)},
            ) from None

    def numeric(self, column: str, what: str) -> int:
        i = self.index(column)
        if self.types[i] == "string":
            raise TypeMismatch(f"{what} needs a numeric column, {column!r} holds strings", {"column": column})
        return i

    def select(self, idx: list[int]) -> Frame:
        return replace(
            self,
            names=tuple(self.names[i] for i in idx),
            types=tuple(self.types[i] for i in idx),
            rows=tuple(tuple(r[i] for i in idx) for r in self.rows),
            raw=tuple(self.raw[i] for i in idx),
            lineage=tuple(self.lineage[i] for i in idx),
        )

    def keep_rows(self, mask: list[bool]) -> Frame:
        return replace(
            self,
            rows=tuple(r for r, m in zip(self.rows, mask) if m),
            prov=tuple(p for p, m in zip(self.prov, mask) if m),
        )

    def to_table(self) -> Table:
        return Table(tuple(zip(self.names, self.types)), self.rows)


@dataclass
class ExecEnv:
    inputs: Mapping[str, Table]
    rng: Any
    salt: bytes
    oracle_mode: bool
    registry: Any
    frames: dict[str, Frame] = field(default_factory=dict)
    noise_scales: list[float] = field(default_factory=list)

    def value(self, var: str) -> Frame:
        try:
            return self.frames[var]
        except KeyError:
            raise ExecutionError(f"variable {var!r} is unbound") from None


@dataclass(frozen=True)
class ExecOutcome:
    outputs: dict[str, Table]
    rng_seed: int
    provenance: dict[str, tuple[frozenset[RowRef], ...]] = field(default_factory=dict)
    frames: dict[str, Frame] = field(default_factory=dict)
    noise_scales: tuple[float, ...] = ()


# -- operators -----------------------------------------------------------------


def run_read(node: ReadCapsule, env: ExecEnv) -> Frame:
    try:
        t = env.inputs[node.capsule_id]
    except KeyError:
        raise ExecutionError(f"no table supplied for capsule {node.capsule_id!r}") from None
    cid = node.capsule_id
    return Frame(
        names=t.columns,
        types=tuple(ty for _, ty in t.schema),
        rows=t.rows,
        prov=tuple(frozenset({(cid, i)}) for i in range(len(t.rows))),
        raw=tuple(frozenset({(cid, c)}) for c in t.columns),
        lineage=tuple(frozenset({(cid, c)}) for c in t.columns),
        origin=frozenset(t.columns),
    )


def run_filter(node: FilterRows, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    i = f.numeric(node.column, "filter")
    out = f.keep_rows([node.interval.contains_value(r[i]) for r in f.rows])
    return replace(out, control=f.control | f.lineage[i])


def run_project(node: Project, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    return f.select([f.index(c) for c in node.columns])


def run_drop(node: DropColumns, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    for c in node.columns:
        f.index(c)
    return f.select([i for i, n in enumerate(f.names) if n not in node.columns])


def digest(salt: bytes, value: Any) -> str:
    return hashlib.sha256(salt + format_cell(value).encode("utf-8")).hexdigest()


def run_hash(node: HashColumn, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    i = f.index(node.column)
    rows = tuple(r[:i] + (digest(env.salt, r[i]),) + r[i + 1 :] for r in f.rows)
    return replace(
        f,
        rows=rows,
        types=f.types[:i] + ("string",) + f.types[i + 1 :],
        raw=f.raw[:i] + (frozenset(),) + f.raw[i + 1 :],
    )


def _aggregate(values: list[Any], func: str, typ: str) -> tuple[Any, str]:
    if func == "count":
        return len(values), "int"
    if func == "sum":
        if typ == "int":
            return sum(values), "int"
        return float(sum(float(v) for v in values)), "float"
    total = sum(values) if typ == "int" else sum(float(v) for v in values)
    return total / len(values), "float"


def _agg_types(f: Frame, aggs) -> list[tuple[int, str, str]]:
    out = []
    for col, func in aggs:
        i = f.index(col) if func == "count" else f.numeric(col, f"aggregate {func}")
        typ = "int" if func == "count" or (func == "sum" and f.types[i] == "int") else "float"
        out.append((i, func, typ))
    return out


def run_group(node: GroupAgg, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    key_idx = [f.index(k, EmptyGroupDomain) for k in node.keys]
    aggs = _agg_types(f, node.aggs)
    groups: dict[tuple, list[int]] = {}
    for n, r in enumerate(f.rows):
        groups.setdefault(tuple(r[i] for i in key_idx), []).append(n)
    rows, prov = [], []
    for key in sorted(groups):
        members = groups[key]
        vals = tuple(_aggregate([f.rows[m][i] for m in members], func, f.types[i])[0] for i, func, _ in aggs)
        rows.append(key + vals)
        prov.append(frozenset().union(*(f.prov[m] for m in members)))
    keys_lineage = frozenset().union(*(f.lineage[i] for i in key_idx))
    return Frame(
        names=tuple(node.keys) + tuple(c for c, _ in node.aggs),
        types=tuple(f.types[i] for i in key_idx) + tuple(t for _, _, t in aggs),
        rows=tuple(rows),
        prov=tuple(prov),
        raw=tuple(f.raw[i] for i in key_idx)
        + tuple(frozenset() if func == "count" else f.raw[i] for i, func, _ in aggs),
        lineage=tuple(f.lineage[i] for i in key_idx) + tuple(f.lineage[i] for i, _, _ in aggs),
        control=f.control | keys_lineage,
        origin=f.origin,
    )


def run_filter_groups(node: FilterGroupsMinSize, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    return f.keep_rows([len(p) >= node.k for p in f.prov])


def run_agg_all(node: AggAll, env: ExecEnv) -> Frame:
    f = env.value(node.src)
    ((i, func, typ),) = _agg_types(f, ((node.column, node.func),))
    if f.rows:
        value, _ = _aggregate([r[i] for r in f.rows], func, f.types[i])
        rows: tuple = ((value,),)
        prov: tuple = (frozenset().union(*f.prov),)
    else:
        # No contributors means no released value.
        rows, prov = (), ()
    return replace(
        f,
        names=(node.column,),
        types=(typ,),
        rows=rows,
        prov=prov,
        raw=(frozenset() if func == "count" else f.raw[i],),
        lineage=(f.lineage[i],),
        scalar=True,
    )


def run_join(node: Join, env: ExecEnv) -> Frame:
    left, right = env.value(node.left), env.value(node.right)
    li = [left.index(k) for k in node.on]
    ri = [right.index(k) for k in node.on]
    shared = (left.origin & right.origin) - set(node.on)
    if shared:
        raise SchemaMismatch(f"join inputs share non-key column(s) {sorted(shared)}", {"shared": sorted(shared)})
    rest = [j for j, n in enumerate(right.names) if n not in node.on]
    index: dict[tuple, list[int]] = {}
    for n, r in enumerate(right.rows):
        index.setdefault(tuple(r[j] for j in ri), []).append(n)
    rows, prov = [], []
    for m, lr in enumerate(left.rows):
        for n in index.get(tuple(lr[i] for i in li), ()):
            rr = right.rows[n]
            rows.append(lr + tuple(rr[j] for j in rest))
            prov.append(left.prov[m] | right.prov[n])
    raw = list(left.raw) + [right.raw[j] for j in rest]
    lineage = list(left.lineage) + [right.lineage[j] for j in rest]
    for i, j in zip(li, ri):
        raw[i] = raw[i] | right.raw[j]
        lineage[i] = lineage[i] | right.lineage[j]
    keys = frozenset().union(*(left.lineage[i] | right.lineage[j] for i, j in zip(li, ri)))
    return Frame(
        names=left.names + tuple(right.names[j] for j in rest),
        types=left.types + tuple(right.types[j] for j in rest),
        rows=tuple(rows),
        prov=tuple(prov),
        raw=tuple(raw),
        lineage=tuple(lineage),
        control=left.control | right.control | keys,
        origin=left.origin | right.origin,
    )


def run_laplace(node: Laplace, env: ExecEnv) -> Frame:
    """Add Laplace(sensitivity/epsilon) noise to every numeric cell, row-major."""
    f = env.value(node.src)
    b = scale_for(node.sensitivity, node.epsilon)
    numeric = [t != "string" for t in f.types]
    rows = []
    for r in f.rows:
        out = []
        for v, is_num in zip(r, numeric):
            if not is_num:
                out.append(v)
            elif env.oracle_mode:
                env.noise_scales.append(b)
                out.append(float(v))
            else:
                out.append(float(v) + laplace_sample(b, env.rng))
        rows.append(tuple(out))
    types = tuple("float" if n else "string" for n in numeric)
    return replace(f, rows=tuple(rows), types=types)


_CMP = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _operand(o: Operand, env: ExecEnv) -> tuple[Any, Frame | None]:
    if o.var is None:
        return o.value, None
    f = env.value(o.var)
    if len(f.names) != 1 or len(f.rows) > 1:
        raise TypeMismatch(f"condition variable {o.var!r} is not a single value")
    return (f.rows[0][0] if f.rows else None), f


def run_branch(node: BranchJoin, env: ExecEnv) -> Frame:
    a, fa = _operand(node.cond.left, env)
    b, fb = _operand(node.cond.right, env)
    if a is None or b is None:
        taken = False  # an empty aggregate compares false
    elif isinstance(a, str) != isinstance(b, str):
        raise TypeMismatch(f"cannot compare {a!r} with {b!r}")
    else:
        taken = _CMP[node.cond.cmp](a, b)
    chosen = env.value(node.then_var if taken else node.else_var)
    prov_extra: frozenset = frozenset()
    control = chosen.control
    origin = chosen.origin
    for cf in (fa, fb):
        if cf is not None:
            prov_extra = prov_extra.union(*cf.prov)
            control = control | cf.control | frozenset().union(*cf.lineage)
            origin = origin | cf.origin
    return replace(
        chosen,
        prov=tuple(p | prov_extra for p in chosen.prov),
        control=control,
        origin=origin,
    )


def run_stub(node: StubCall, env: ExecEnv) -> Frame:
    from ..analyzer.transfer import bind_stub_args

    desc = env.registry.lookup(node.name)
    if desc.concrete is not None:
        return desc.concrete(node, env)
    args = bind_stub_args(node, desc.params)
    scratch = dict(env.frames)
    sub = replace(env, frames=scratch)
    cur = node.src
    if desc.row_filter is not None:
        col, lo, hi = (args[p] for p in desc.row_filter)
        scratch["__stub"] = run_filter(FilterRows(cur, str(col), Interval.closed(float(lo), float(hi))), sub)
        cur = "__stub"
    for p in desc.drops:
        scratch["__stub"] = run_drop(DropColumns(cur, (str(args[p]),)), sub)
        cur = "__stub"
    for p in desc.hashes:
        scratch["__stub"] = run_hash(HashColumn(cur, str(args[p])), sub)
        cur = "__stub"
    return scratch[cur]


BUILTIN_CONCRETE = {
    ReadCapsule: run_read,
    FilterRows: run_filter,
    Project: run_project,
    DropColumns: run_drop,
    HashColumn: run_hash,
    GroupAgg: run_group,
    FilterGroupsMinSize: run_filter_groups,
    AggAll: run_agg_all,
    Join: run_join,
    Laplace: run_laplace,
    BranchJoin: run_branch,
    StubCall: run_stub,
}


def default_salt(seed: int) -> bytes:
    return hashlib.sha256(b"capsuleguard-salt:" + str(int(seed)).encode()).digest()


def execute(
    ir: ProgramIR,
    inputs: Mapping[str, Table],
    seed: int = 0,
    oracle_mode: bool = False,
    registry: Any = None,
    salt: bytes | None = None,
) -> ExecOutcome:
    """Run ``ir`` on concrete tables; deterministic for a given seed and salt.

    With ``oracle_mode`` the Laplace operator adds no noise and records the
    scale it would have used; row provenance is returned for every output.
    """
    if registry is None:
        from ..analyzer.stubs import default_registry

        registry = default_registry()
    diags = validate(ir)
    if diags:
        raise ExecutionError("program IR is invalid: " + "; ".join(d.render() for d in diags))
    env = ExecEnv(
        inputs=inputs,
        rng=make_rng(seed),
        salt=default_salt(seed) if salt is None else salt,
        oracle_mode=oracle_mode,
        registry=registry,
    )
    outputs: dict[str, Table] = {}
    for stmt in ir.statements:
        if isinstance(stmt, Assign):
            desc = registry.entries.get(stmt.expr.op)
            if desc is not None and not desc.builtin and desc.concrete is not None:
                env.frames[stmt.var] = desc.concrete(stmt.expr, env)
            else:
                env.frames[stmt.var] = BUILTIN_CONCRETE[type(stmt.expr)](stmt.expr, env)
        elif isinstance(stmt, Output):
            outputs[stmt.var] = env.value(stmt.var).to_table()
    frames = {v: env.frames[v] for v in outputs}
    provenance = {v: frames[v].prov for v in outputs} if oracle_mode else {}
    return ExecOutcome(
        outputs=outputs,
        rng_seed=int(seed),
        provenance=provenance,
        frames=frames,
        noise_scales=tuple(env.noise_scales),
    )
