"""Analyst surface language and its straight-line dataflow IR."""

from .ir import (
    AGG_FUNCS,
    AggAll,
    Assign,
    BranchJoin,
    Cond,
    DropColumns,
    Expr,
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
    Statement,
    StubCall,
    dumps_canonical,
)
from .parser import MAX_UNROLL, parse_program
from .validate import Diagnostic, validate

__all__ = [
    "AGG_FUNCS",
    "MAX_UNROLL",
    "AggAll",
    "Assign",
    "BranchJoin",
    "Cond",
    "Diagnostic",
    "DropColumns",
    "Expr",
    "FilterGroupsMinSize",
    "FilterRows",
    "GroupAgg",
    "HashColumn",
    "Join",
    "Laplace",
    "Operand",
    "Output",
    "ProgramIR",
    "Project",
    "ReadCapsule",
    "Statement",
    "StubCall",
    "dumps_canonical",
    "parse_program",
    "validate",
]
