"""Brute-force check of row-level requirements on a concrete run.

The oracle reruns the program in oracle mode and inspects the provenance and
column lineage the interpreter recorded.  It knows nothing about the
analyzer and is the ground truth the analyzer is tested against.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any

from ..errors import UnsupportedRequirement
from ..policy.model import Aggregate, Filter, Redact, Requirement, Schema
from ..program.ir import ProgramIR
from .interp import Frame, execute
from .table import Table


def _filter_ok(req: Filter, frame: Frame, inputs: Mapping[str, Table]) -> bool:
    contributing = frozenset().union(*frame.prov) if frame.prov else frozenset()
    for cid, row in contributing:
        t = inputs[cid]
        if req.column not in t.columns:
            continue
        v = t.rows[row][t.columns.index(req.column)]
        if isinstance(v, str) or not req.interval.contains_value(v):
            return False
    return True


def _redact_ok(req: Redact, frame: Frame) -> bool:
    return all(col != req.column for raw in frame.raw for _, col in raw)


def _schema_ok(req: Schema, frame: Frame) -> bool:
    refs = frozenset().union(frame.control, *frame.lineage)
    return all(col in req.columns for _, col in refs)


def _aggregate_ok(req: Aggregate, frame: Frame) -> bool:
    return all(len(p) >= req.k for p in frame.prov)


def oracle_check(
    requirement: Requirement,
    ir: ProgramIR,
    inputs: Mapping[str, Table],
    output: str | None = None,
    registry: Any = None,
    seed: int = 0,
) -> bool:
    """Does every output (or just ``output``) concretely meet ``requirement``?"""
    if not isinstance(requirement, (Filter, Redact, Schema, Aggregate)):
        raise UnsupportedRequirement(
            f"{requirement.kind} is not checkable on rows", {"requirement": requirement.render()}
        )
    outcome = execute(ir, inputs, seed=seed, oracle_mode=True, registry=registry)
    names = [output] if output is not None else list(outcome.frames)
    for name in names:
        frame = outcome.frames[name]
        if isinstance(requirement, Filter):
            ok = _filter_ok(requirement, frame, inputs)
        elif isinstance(requirement, Redact):
            ok = _redact_ok(requirement, frame)
        elif isinstance(requirement, Schema):
            ok = _schema_ok(requirement, frame)
        else:
            ok = _aggregate_ok(requirement, frame)
        if not ok:
            return False
    return True
