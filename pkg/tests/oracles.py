"""Reference semantics for policies, written without the library's lattice code.

A *world* fixes the evidence a program run could produce: the interval each
column's contributing rows lie in, the columns that never reach the output
raw, the set of columns the output depends on, the aggregation floor, the
DP guarantee, the analyst's roles and the job purpose.  A requirement holds
in a world by direct inspection; a policy holds when some clause holds
entirely.

Policies speak about data that exists: a filtered column is present and
its contributing values span a non-empty interval.  Under that reading two
disjoint filters on one column can never both hold.  A column may also hold
values outside every interval (text, say), which no filter admits.

For any finite set of requirements, only finitely many worlds behave
differently.  Per evidence slot, the pattern of satisfied requirements of an
arbitrary world is reproduced by the world built from the intersection (or
minimum) of exactly the requirements it satisfies.  Enumerating those
landmark worlds therefore decides implication exactly.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

from capsuleguard.policy.model import (
    DP,
    Aggregate,
    Filter,
    Interval,
    Policy,
    Purpose,
    Redact,
    Requirement,
    Role,
    Schema,
)

OUTSIDE = "__not_in_any_schema__"


@dataclass(frozen=True)
class World:
    bounds: tuple[tuple[str, Interval | None], ...]  # None: values lie in no interval
    hidden: frozenset[str]
    schema: frozenset[str]
    floor: int
    dp: tuple[float, float] | None
    roles: frozenset[str]
    purpose: str | None


def _empty(a: Interval) -> bool:
    return a.lower > a.upper or (a.lower == a.upper and not (a.lower_closed and a.upper_closed))


def _subset(a: Interval, b: Interval) -> bool:
    """a is contained in b, decided pointwise on the endpoints."""
    if _empty(a):
        return True
    lo_ok = a.lower > b.lower or (a.lower == b.lower and (b.lower_closed or not a.lower_closed))
    hi_ok = a.upper < b.upper or (a.upper == b.upper and (b.upper_closed or not a.upper_closed))
    return lo_ok and hi_ok


def _meet(ivs: Iterable[Interval]) -> Interval:
    """Endpoint-wise intersection; may be empty."""
    lo, lc, hi, hc = float("-inf"), False, float("inf"), False
    for iv in ivs:
        if iv.lower > lo:
            lo, lc = iv.lower, iv.lower_closed
        elif iv.lower == lo:
            lc = lc and iv.lower_closed
        if iv.upper < hi:
            hi, hc = iv.upper, iv.upper_closed
        elif iv.upper == hi:
            hc = hc and iv.upper_closed
    return Interval(lo, hi, lc, hc)


def holds(r: Requirement, w: World) -> bool:
    if isinstance(r, Filter):
        bound = dict(w.bounds).get(r.column)
        return bound is not None and _subset(bound, r.interval)
    if isinstance(r, Redact):
        return r.column in w.hidden
    if isinstance(r, Schema):
        return w.schema <= r.columns
    if isinstance(r, Aggregate):
        return w.floor >= r.k
    if isinstance(r, DP):
        return w.dp is not None and w.dp[0] <= r.epsilon and w.dp[1] <= r.delta
    if isinstance(r, Role):
        return r.role in w.roles
    if isinstance(r, Purpose):
        return w.purpose == r.purpose
    raise TypeError(r)


def sat(p: Policy, w: World, assume: frozenset = frozenset()) -> bool:
    """Policy truth in ``w``; requirements in ``assume`` count as met."""
    return any(all(r in assume or holds(r, w) for r in clause) for clause in p.clauses)


def _subsets(items: list) -> Iterator[tuple]:
    for n in range(len(items) + 1):
        yield from itertools.combinations(items, n)


def worlds(reqs: Iterable[Requirement]) -> Iterator[World]:
    reqs = set(reqs)
    filters: dict[str, list[Interval]] = {}
    for r in reqs:
        if isinstance(r, Filter):
            filters.setdefault(r.column, [])
            if r.interval not in filters[r.column]:
                filters[r.column].append(r.interval)
    bound_choices = []
    for col, ivs in sorted(filters.items()):
        opts: list[Interval | None] = [None]
        for sub in _subsets(ivs):
            m = _meet(sub)
            if not _empty(m) and m not in opts:
                opts.append(m)
        bound_choices.append([(col, o) for o in opts])
    redact_cols = sorted({r.column for r in reqs if isinstance(r, Redact)})
    schemas = [r.columns for r in reqs if isinstance(r, Schema)]
    universe = frozenset().union(*schemas) | {OUTSIDE}
    schema_opts = {universe}
    for sub in _subsets(schemas):
        # Every output keeps at least one column, so an empty schema never occurs.
        if sub and frozenset.intersection(*sub):
            schema_opts.add(frozenset.intersection(*sub))
    floors = sorted({0} | {r.k for r in reqs if isinstance(r, Aggregate)})
    dps = [r for r in reqs if isinstance(r, DP)]
    dp_opts: list = [None] + sorted({(a.epsilon, b.delta) for a in dps for b in dps})
    roles = sorted({r.role for r in reqs if isinstance(r, Role)})
    purposes = [None] + sorted({r.purpose for r in reqs if isinstance(r, Purpose)})
    for bounds in itertools.product(*bound_choices):
        for hidden in _subsets(redact_cols):
            for schema in sorted(schema_opts, key=sorted):
                for floor in floors:
                    for dp in dp_opts:
                        for rs in _subsets(roles):
                            for purpose in purposes:
                                yield World(
                                    tuple(bounds), frozenset(hidden), schema, floor, dp, frozenset(rs), purpose
                                )


def requirements_of(*policies: Policy) -> frozenset:
    out: set = set()
    for p in policies:
        for c in p.clauses:
            out |= c
    return frozenset(out)


def oracle_implies(a: Policy, b: Policy, extra: Iterable[Requirement] = ()) -> bool:
    """sat(a) is a subset of sat(b) over every world."""
    return all(not sat(a, w) or sat(b, w) for w in worlds(requirements_of(a, b) | set(extra)))


def oracle_equivalent(a: Policy, b: Policy, extra: Iterable[Requirement] = ()) -> bool:
    return all(sat(a, w) == sat(b, w) for w in worlds(requirements_of(a, b) | set(extra)))


def oracle_conjunction_matches(a: Policy, b: Policy, c: Policy) -> bool:
    """Is ``c`` semantically the conjunction of ``a`` and ``b``?"""
    return all((sat(a, w) and sat(b, w)) == sat(c, w) for w in worlds(requirements_of(a, b, c)))


def oracle_residual_matches(p: Policy, discharged: frozenset, residual: Policy) -> bool:
    """``residual`` holds exactly where ``p`` holds once ``discharged`` is taken as met."""
    reqs = requirements_of(p, residual) | discharged
    return all(sat(residual, w) == sat(p, w, discharged) for w in worlds(reqs))


def world_count(reqs: Iterable[Requirement]) -> int:
    return sum(1 for _ in worlds(reqs))
