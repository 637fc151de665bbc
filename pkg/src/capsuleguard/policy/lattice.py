"""Normal form and lattice operations on policies.

Within one clause, requirements that constrain the same evidence slot are
merged: same-column filters intersect, schemas intersect, DP bounds take the
componentwise minimum and aggregation floors the maximum.  Afterwards no two
requirements in a clause are comparable by :func:`stronger`, which makes
``implies`` antisymmetric on normal forms.
"""

from __future__ import annotations

from collections.abc import Iterable

from ..errors import SemanticError, SizeError
from .model import (
    DP,
    SATISFIED,
    Aggregate,
    Clause,
    Filter,
    Policy,
    Purpose,
    Requirement,
    Schema,
    render_clause,
)

DEFAULT_MAX_CLAUSES = 1024


def stronger(r1: Requirement, r2: Requirement) -> bool:
    """True when satisfying ``r1`` always satisfies ``r2``."""
    if type(r1) is not type(r2):
        return False
    if isinstance(r1, Filter):
        return r1.column == r2.column and r1.interval.issubset(r2.interval)
    if isinstance(r1, Aggregate):
        return r1.k >= r2.k
    if isinstance(r1, DP):
        return r1.epsilon <= r2.epsilon and r1.delta <= r2.delta
    if isinstance(r1, Schema):
        return r1.columns <= r2.columns
    return r1 == r2


def clause_implies(c1: Clause, c2: Clause) -> bool:
    return all(any(stronger(r1, r2) for r1 in c1) for r2 in c2)


def normalize_clause(reqs: Iterable[Requirement]) -> Clause | None:
    """Merge one conjunction; ``None`` when it can never be satisfied."""
    filters: dict[str, Filter] = {}
    schema: frozenset[str] | None = None
    dp: tuple[float, float] | None = None
    agg = 0
    purpose: Purpose | None = None
    rest: set[Requirement] = set()
    for r in reqs:
        if isinstance(r, Filter):
            prev = filters.get(r.column)
            if prev is None:
                filters[r.column] = r
            else:
                merged = prev.interval.intersect(r.interval)
                if merged.is_empty:
                    return None
                filters[r.column] = Filter(r.column, merged)
        elif isinstance(r, Schema):
            schema = r.columns if schema is None else schema & r.columns
            if not schema:
                return None
        elif isinstance(r, DP):
            dp = (r.epsilon, r.delta) if dp is None else (min(dp[0], r.epsilon), min(dp[1], r.delta))
        elif isinstance(r, Aggregate):
            agg = max(agg, r.k)
        elif isinstance(r, Purpose):
            # A job runs under exactly one purpose.
            if purpose is not None and purpose != r:
                return None
            purpose = r
            rest.add(r)
        else:
            rest.add(r)
    rest.update(filters.values())
    if schema is not None:
        rest.add(Schema(schema))
    if dp is not None:
        rest.add(DP(*dp))
    if agg:
        rest.add(Aggregate(agg))
    return frozenset(rest)


def normalize(p: Policy, *, strict: bool = False) -> Policy:
    """Canonical form of ``p``; idempotent.

    With ``strict=True`` a clause whose filters intersect to nothing raises
    :class:`SemanticError` instead of being dropped silently.
    """
    merged: set[Clause] = set()
    for clause in p.clauses:
        nc = normalize_clause(clause)
        if nc is None:
            if strict:
                raise SemanticError(
                    f"clause is unsatisfiable: {render_clause(clause)}",
                    {"clause": render_clause(clause)},
                )
            continue
        merged.add(nc)
    # Drop every clause that is at least as strong as a different one: it
    # adds nothing to the disjunction.
    ordered = sorted(merged, key=lambda c: (len(c), render_clause(c)))
    kept: list[Clause] = []
    for c in ordered:
        if not any(clause_implies(c, k) for k in kept):
            kept = [k for k in kept if not clause_implies(k, c)]
            kept.append(c)
    kept.sort(key=render_clause)
    return Policy(tuple(kept))


def combine(a: Policy, b: Policy, *, max_clauses: int = DEFAULT_MAX_CLAUSES) -> Policy:
    """Conjunction of two policies in disjunctive normal form."""
    product = [ca | cb for ca in a.clauses for cb in b.clauses]
    result = normalize(Policy(tuple(product)))
    if len(result.clauses) > max_clauses:
        raise SizeError(
            f"combined policy has {len(result.clauses)} clauses (cap {max_clauses})",
            {"clauses": len(result.clauses), "cap": max_clauses},
        )
    return result


def combine_all(policies: Iterable[Policy], *, max_clauses: int = DEFAULT_MAX_CLAUSES) -> Policy:
    out = SATISFIED
    for p in policies:
        out = combine(out, p, max_clauses=max_clauses)
    return out


def implies(a: Policy, b: Policy) -> bool:
    """Does every way of satisfying ``a`` also satisfy ``b``?"""
    a, b = normalize(a), normalize(b)
    return all(any(clause_implies(ca, cb) for cb in b.clauses) for ca in a.clauses)


def is_satisfied(p: Policy) -> bool:
    return any(not c for c in p.clauses)
