"""Abstract values tracked per program variable, and requirement discharge.

An :class:`AbstractValue` summarizes every concrete table a variable can hold
across all inputs that match the capsule metadata.  Each field is evidence
for one requirement kind:

=================  ==========================================================
``filtered``       column -> interval every contributing input row lies in
``verbatim``       columns whose cells equal the contributing rows' own value
``columns``        columns still holding raw values (``REDACT``)
``redacted``       columns dropped or hashed along the dataflow path
``used``           columns whose values influenced the result (``SCHEMA``)
``agg_floor``      lower bound on contributing rows per output cell
``dp_spent``       (epsilon, delta) of the mechanism protecting the value
=================  ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from ..errors import SchemaMismatch
from ..policy.model import (
    DP,
    TOP,
    Aggregate,
    Filter,
    Interval,
    Purpose,
    Redact,
    Requirement,
    Role,
    Schema,
)
from ..program.ir import interval_from_data, interval_to_data


@dataclass(frozen=True)
class AnalystContext:
    roles: frozenset[str] = frozenset()
    purpose: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "roles", frozenset(self.roles))


@dataclass(frozen=True)
class AbstractValue:
    sources: frozenset[str]
    schema: tuple[str, ...]
    columns: frozenset[str]
    origin: frozenset[str]
    redacted: frozenset[str] = frozenset()
    filtered: dict[str, Interval] = field(default_factory=dict)
    used: frozenset[str] = frozenset()
    agg_floor: int = 1
    known_rows: int | None = None
    dp_spent: tuple[float, float] | None = None
    aggregated: bool = False
    is_scalarized: bool = False
    verbatim: frozenset[str] = frozenset()

    @classmethod
    def fresh(cls, capsule_id: str, schema: tuple[str, ...], row_count: int | None) -> AbstractValue:
        cols = frozenset(schema)
        return cls(
            sources=frozenset({capsule_id}),
            schema=tuple(schema),
            columns=cols,
            origin=cols,
            known_rows=row_count,
            verbatim=cols,
        )

    @property
    def hashed(self) -> frozenset[str]:
        return frozenset(self.schema) - self.columns

    def bound(self, column: str) -> Interval | None:
        """Interval enforced on ``column`` for contributing rows.

        ``None`` means no source ever had the column, so the constraint is
        vacuous.
        """
        if column in self.filtered:
            return self.filtered[column]
        return TOP if column in self.origin else None

    def require_columns(self, cols, what: str) -> None:
        missing = [c for c in cols if c not in self.schema]
        if missing:
            raise SchemaMismatch(
                f"{what}: column(s) {', '.join(map(repr, missing))} not present "
                f"(available: {', '.join(self.schema)})",
                {"missing": missing, "available": list(self.schema)},
            )

    def reshape(self, schema: tuple[str, ...], **changes: Any) -> AbstractValue:
        """Keep only ``schema``; vanished raw columns become redacted."""
        keep = frozenset(schema)
        gone = frozenset(self.schema) - keep
        return replace(
            self,
            schema=tuple(schema),
            columns=self.columns & keep,
            redacted=(self.redacted | gone) - (self.columns & keep),
            **{"verbatim": self.verbatim & keep, **changes},
        )

    def check(self) -> None:
        assert not (self.redacted & self.columns), "redacted column still present"
        assert self.columns <= frozenset(self.schema)
        assert self.verbatim <= frozenset(self.schema)
        assert self.agg_floor >= 0
        assert self.dp_spent is None or self.dp_spent[0] > 0

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "sources": sorted(self.sources),
            "schema": list(self.schema),
            "columns": sorted(self.columns),
            "origin": sorted(self.origin),
            "redacted": sorted(self.redacted),
            "filtered": {c: interval_to_data(iv) for c, iv in sorted(self.filtered.items())},
            "used": sorted(self.used),
            "agg_floor": self.agg_floor,
            "known_rows": self.known_rows,
            "dp_spent": list(self.dp_spent) if self.dp_spent else None,
            "aggregated": self.aggregated,
            "is_scalarized": self.is_scalarized,
            "verbatim": sorted(self.verbatim),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AbstractValue:
        return cls(
            sources=frozenset(d["sources"]),
            schema=tuple(d["schema"]),
            columns=frozenset(d["columns"]),
            origin=frozenset(d["origin"]),
            redacted=frozenset(d["redacted"]),
            filtered={c: interval_from_data(iv) for c, iv in d["filtered"].items()},
            used=frozenset(d["used"]),
            agg_floor=int(d["agg_floor"]),
            known_rows=d["known_rows"],
            dp_spent=tuple(d["dp_spent"]) if d["dp_spent"] else None,
            aggregated=bool(d["aggregated"]),
            is_scalarized=bool(d["is_scalarized"]),
            verbatim=frozenset(d.get("verbatim", ())),
        )


def _hull(a: Interval | None, b: Interval | None) -> Interval | None:
    if a is None:
        return b
    if b is None:
        return a
    return a.hull(b)


def join_values(a: AbstractValue, b: AbstractValue) -> AbstractValue:
    """Least upper bound: evidence that holds whichever value flows."""
    if a.schema != b.schema:
        raise SchemaMismatch(
            f"branches produce different columns: {list(a.schema)} vs {list(b.schema)}",
            {"then": list(a.schema), "else": list(b.schema)},
        )
    columns = a.columns | b.columns
    origin = a.origin | b.origin
    filtered: dict[str, Interval] = {}
    for c in set(a.filtered) | set(b.filtered):
        iv = _hull(a.bound(c), b.bound(c))
        if iv is not None and not iv.is_top:
            filtered[c] = iv
    dp = None
    if a.dp_spent and b.dp_spent:
        dp = (max(a.dp_spent[0], b.dp_spent[0]), max(a.dp_spent[1], b.dp_spent[1]))
    return AbstractValue(
        sources=a.sources | b.sources,
        schema=a.schema,
        columns=columns,
        origin=origin,
        redacted=(a.redacted | b.redacted) - columns,
        filtered=filtered,
        used=a.used | b.used,
        agg_floor=min(a.agg_floor, b.agg_floor),
        known_rows=a.known_rows if a.known_rows == b.known_rows else None,
        dp_spent=dp,
        aggregated=a.aggregated and b.aggregated,
        is_scalarized=a.is_scalarized and b.is_scalarized,
        verbatim=a.verbatim & b.verbatim,
    )


def discharge(req: Requirement, v: AbstractValue, ctx: AnalystContext) -> tuple[bool, str]:
    """Decide one requirement against the evidence in ``v``; returns (ok, reason)."""
    if isinstance(req, Role):
        if req.role in ctx.roles:
            return True, f"analyst holds role {req.role}"
        return False, f"analyst lacks role {req.role}"
    if isinstance(req, Purpose):
        if req.purpose == ctx.purpose:
            return True, f"job purpose is {req.purpose}"
        return False, f"job purpose is {ctx.purpose or 'unset'}, not {req.purpose}"
    if isinstance(req, Filter):
        iv = v.bound(req.column)
        if iv is None:
            return True, f"no source has column {req.column}"
        if req.column not in v.filtered:
            # Without a filter nothing is known, not even that the cells are numbers.
            return False, f"rows are not filtered on {req.column}"
        if iv.issubset(req.interval):
            return True, f"rows restricted to {req.column} in {iv}"
        return False, f"rows only restricted to {req.column} in {iv}"
    if isinstance(req, Redact):
        if req.column in v.columns:
            return False, f"raw column {req.column} reaches the output"
        if req.column in v.hashed:
            return True, f"{req.column} is hashed"
        if req.column in v.redacted:
            return True, f"{req.column} was dropped"
        return True, f"{req.column} is not in the output"
    if isinstance(req, Schema):
        outside = (set(v.schema) | v.used) - req.columns
        if outside:
            return False, f"uses columns outside the schema: {', '.join(sorted(outside))}"
        return True, "only schema columns are used"
    if isinstance(req, Aggregate):
        if v.agg_floor >= req.k:
            return True, f"each value aggregates at least {v.agg_floor} rows"
        return False, f"only {v.agg_floor} contributing row(s) guaranteed per value"
    if isinstance(req, DP):
        if v.dp_spent is None:
            return False, "no differentially private mechanism on the output path"
        eps, delta = v.dp_spent
        if eps <= req.epsilon and delta <= req.delta:
            return True, f"laplace mechanism with epsilon={eps:g}, delta={delta:g}"
        return False, f"mechanism epsilon={eps:g}, delta={delta:g} is weaker than required"
    raise TypeError(f"unknown requirement {req!r}")
