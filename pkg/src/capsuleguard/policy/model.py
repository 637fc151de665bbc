"""Policy AST: intervals, the seven requirement kinds, clauses and policies."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Union

from ..errors import SemanticError

INF = math.inf


def format_number(x: float) -> str:
    """Shortest round-trip decimal; ``inf``/``-inf`` for unbounded values."""
    x = float(x)
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    if x == 0:
        return "0"
    text = repr(x)
    if text.endswith(".0"):
        return text[:-2]
    mantissa, e, exp = text.partition("e")
    if e:
        exp = exp.lstrip("+")
        sign = "-" if exp.startswith("-") else ""
        text = f"{mantissa}e{sign}{exp.lstrip('-').lstrip('0')}"
    return text


@dataclass(frozen=True)
class Interval:
    """Real interval with optional open ends; infinite ends are always open."""

    lower: float = -INF
    upper: float = INF
    lower_closed: bool = False
    upper_closed: bool = False

    def __post_init__(self) -> None:
        lo, hi = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(hi):
            raise SemanticError("interval bounds must be numbers")
        object.__setattr__(self, "lower", 0.0 if lo == 0 else lo)
        object.__setattr__(self, "upper", 0.0 if hi == 0 else hi)
        if math.isinf(lo):
            object.__setattr__(self, "lower_closed", False)
        if math.isinf(hi):
            object.__setattr__(self, "upper_closed", False)

    @classmethod
    def closed(cls, lower: float, upper: float) -> Interval:
        return cls(lower, upper, True, True)

    @classmethod
    def at_least(cls, lower: float) -> Interval:
        return cls(lower, INF, True, False)

    @property
    def is_empty(self) -> bool:
        if self.lower < self.upper:
            return False
        if self.lower == self.upper:
            return not (self.lower_closed and self.upper_closed)
        return True

    @property
    def is_top(self) -> bool:
        return self.lower == -INF and self.upper == INF

    def contains_value(self, v: float) -> bool:
        if v < self.lower or (v == self.lower and not self.lower_closed):
            return False
        if v > self.upper or (v == self.upper and not self.upper_closed):
            return False
        return True

    def issubset(self, other: Interval) -> bool:
        if self.is_empty:
            return True
        if self.lower < other.lower or (
            self.lower == other.lower and self.lower_closed and not other.lower_closed
        ):
            return False
        if self.upper > other.upper or (
            self.upper == other.upper and self.upper_closed and not other.upper_closed
        ):
            return False
        return True

    def intersect(self, other: Interval) -> Interval:
        if self.lower > other.lower:
            lo, lc = self.lower, self.lower_closed
        elif other.lower > self.lower:
            lo, lc = other.lower, other.lower_closed
        else:
            lo, lc = self.lower, self.lower_closed and other.lower_closed
        if self.upper < other.upper:
            hi, hc = self.upper, self.upper_closed
        elif other.upper < self.upper:
            hi, hc = other.upper, other.upper_closed
        else:
            hi, hc = self.upper, self.upper_closed and other.upper_closed
        return Interval(lo, hi, lc, hc)

    def hull(self, other: Interval) -> Interval:
        """Smallest interval containing both."""
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        if self.lower < other.lower:
            lo, lc = self.lower, self.lower_closed
        elif other.lower < self.lower:
            lo, lc = other.lower, other.lower_closed
        else:
            lo, lc = self.lower, self.lower_closed or other.lower_closed
        if self.upper > other.upper:
            hi, hc = self.upper, self.upper_closed
        elif other.upper > self.upper:
            hi, hc = other.upper, other.upper_closed
        else:
            hi, hc = self.upper, self.upper_closed or other.upper_closed
        return Interval(lo, hi, lc, hc)

    def render(self) -> str:
        return "{}{}, {}{}".format(
            "[" if self.lower_closed else "(",
            format_number(self.lower),
            format_number(self.upper),
            "]" if self.upper_closed else ")",
        )

    def __str__(self) -> str:
        return self.render()


TOP = Interval()


@dataclass(frozen=True)
class Schema:
    columns: frozenset[str]
    kind: ClassVar[str] = "SCHEMA"

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", frozenset(self.columns))
        if not self.columns:
            raise SemanticError("SCHEMA needs at least one column")

    def render(self) -> str:
        return f"SCHEMA({', '.join(sorted(self.columns))})"


@dataclass(frozen=True)
class Filter:
    column: str
    interval: Interval
    kind: ClassVar[str] = "FILTER"

    def __post_init__(self) -> None:
        if self.interval.is_empty:
            raise SemanticError(f"FILTER {self.column} has an empty interval {self.interval}")

    def render(self) -> str:
        return f"FILTER {self.column} IN {self.interval.render()}"


@dataclass(frozen=True)
class Redact:
    column: str
    kind: ClassVar[str] = "REDACT"

    def render(self) -> str:
        return f"REDACT {self.column}"


@dataclass(frozen=True)
class Role:
    role: str
    kind: ClassVar[str] = "ROLE"

    def render(self) -> str:
        return f"ROLE {self.role}"


@dataclass(frozen=True)
class Purpose:
    purpose: str
    kind: ClassVar[str] = "PURPOSE"

    def render(self) -> str:
        return f"PURPOSE {self.purpose}"


@dataclass(frozen=True)
class Aggregate:
    k: int
    kind: ClassVar[str] = "AGGREGATE"

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise SemanticError(f"AGGREGATE needs a positive integer, got {self.k!r}")

    def render(self) -> str:
        return f"PRIVACY AGGREGATE({self.k})"


@dataclass(frozen=True)
class DP:
    epsilon: float
    delta: float = 0.0
    kind: ClassVar[str] = "DP"

    def __post_init__(self) -> None:
        eps, delta = float(self.epsilon), float(self.delta)
        if not (eps > 0 and math.isfinite(eps)):
            raise SemanticError(f"DP epsilon must be a positive finite number, got {self.epsilon!r}")
        if not 0.0 <= delta <= 1.0:
            raise SemanticError(f"DP delta must lie in [0, 1], got {self.delta!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", 0.0 if delta == 0 else delta)

    def render(self) -> str:
        return f"PRIVACY DP({format_number(self.epsilon)}, {format_number(self.delta)})"


Requirement = Union[Schema, Filter, Redact, Role, Purpose, Aggregate, DP]
REQUIREMENT_TYPES = (Schema, Filter, Redact, Role, Purpose, Aggregate, DP)

Clause = frozenset  # frozenset[Requirement], a conjunction


def render_clause(clause: Clause) -> str:
    if not clause:
        return "EMPTY"
    return "ALLOW " + " AND ".join(sorted(r.render() for r in clause))


@dataclass(frozen=True)
class Policy:
    """Disjunction of clauses.

    ``Policy(())`` is UNSATISFIABLE; a policy holding one empty clause is
    SATISFIED.  Use :func:`capsuleguard.policy.normalize` to reach the
    canonical form that printing and equality rely on.
    """

    clauses: tuple[Clause, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "clauses", tuple(frozenset(c) for c in self.clauses))

    def requirements(self) -> frozenset:
        out: set = set()
        for c in self.clauses:
            out |= c
        return frozenset(out)

    def __str__(self) -> str:
        from .syntax import print_policy

        return print_policy(self)


SATISFIED = Policy((frozenset(),))
UNSATISFIABLE = Policy(())
