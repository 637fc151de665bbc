"""Policy language: AST, grammar, normal form and lattice algebra."""

from .lattice import (
    DEFAULT_MAX_CLAUSES,
    clause_implies,
    combine,
    combine_all,
    implies,
    is_satisfied,
    normalize,
    stronger,
)
from .model import (
    DP,
    INF,
    SATISFIED,
    TOP,
    UNSATISFIABLE,
    Aggregate,
    Clause,
    Filter,
    Interval,
    Policy,
    Purpose,
    Redact,
    Requirement,
    Role,
    Schema,
    format_number,
    render_clause,
)
from .syntax import parse_policy, parse_requirement, print_policy

__all__ = [
    "DEFAULT_MAX_CLAUSES",
    "DP",
    "INF",
    "SATISFIED",
    "TOP",
    "UNSATISFIABLE",
    "Aggregate",
    "Clause",
    "Filter",
    "Interval",
    "Policy",
    "Purpose",
    "Redact",
    "Requirement",
    "Role",
    "Schema",
    "clause_implies",
    "combine",
    "combine_all",
    "format_number",
    "implies",
    "is_satisfied",
    "normalize",
    "parse_policy",
    "parse_requirement",
    "print_policy",
    "render_clause",
    "stronger",
]
