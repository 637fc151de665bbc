"""Shared drivers for the soundness and compositionality properties."""

from __future__ import annotations

from dataclasses import dataclass

from capsuleguard.analyzer import CapsuleMeta, analyze
from capsuleguard.errors import CapsuleGuardError
from capsuleguard.executor import oracle_check
from capsuleguard.policy import Aggregate, Filter, Redact, Schema
from capsuleguard.program import Assign, Output, ProgramIR, ReadCapsule

from generators import GeneratedCase

ROW_CHECKABLE = (Filter, Redact, Schema, Aggregate)


def soundness_violations(case: GeneratedCase) -> tuple[int, list[tuple[str, str]]] | None:
    """(discharges checked, violations) or None when the program is rejected."""
    try:
        res = analyze(case.ir, case.metas())
    except CapsuleGuardError:
        return None
    checked, bad = 0, []
    for var, done in res.discharged.items():
        for r in done:
            if isinstance(r, ROW_CHECKABLE):
                checked += 1
                if not oracle_check(r, case.ir, case.tables, output=var):
                    bad.append((var, r.render()))
    return checked, bad


@dataclass(frozen=True)
class Split:
    head: ProgramIR
    live: tuple[str, ...]
    tail: tuple[Assign, ...]
    outputs: tuple[str, ...]


def split_at(ir: ProgramIR, boundary: int) -> Split | None:
    """Cut after ``boundary`` assignments; None when nothing crosses the cut."""
    assigns = [s for s in ir.statements if isinstance(s, Assign)]
    outs = tuple(s.var for s in ir.statements if isinstance(s, Output))
    head, tail = assigns[:boundary], assigns[boundary:]
    needed = set(outs)
    for s in tail:
        needed |= set(s.expr.uses())
    live = tuple(sorted({s.var for s in head} & needed))
    if not live:
        return None
    return Split(ProgramIR(tuple(head) + tuple(Output(v) for v in live)), live, tuple(tail), outs)


def staged_residuals(ir: ProgramIR, metas: dict, boundary: int):
    """Analyze both halves, the second against derived capsules from the first.

    Returns (whole-program residuals, staged residuals), or None if the cut
    carries nothing.
    """
    sp = split_at(ir, boundary)
    if sp is None:
        return None
    whole = analyze(ir, metas)
    first = analyze(sp.head, metas)
    inputs = dict(metas)
    reads = []
    for v in sp.live:
        ev = first.evidence[v]
        inputs["derived:" + v] = CapsuleMeta(first.per_output[v], ev.schema, ev.known_rows, evidence=ev)
        reads.append(Assign(v, ReadCapsule("derived:" + v)))
    second = analyze(ProgramIR(tuple(reads) + sp.tail + tuple(Output(v) for v in sp.outputs)), inputs)
    return whole.per_output, second.per_output
