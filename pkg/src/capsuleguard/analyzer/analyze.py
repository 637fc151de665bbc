"""Abstract execution of a program over capsule metadata."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Union

from ..errors import AnalysisError, MissingCapsule
from ..policy.lattice import DEFAULT_MAX_CLAUSES, combine_all, is_satisfied, normalize
from ..policy.model import Policy, Requirement
from ..policy.syntax import parse_policy, print_policy
from ..program.ir import Assign, Output, ProgramIR, dumps_canonical
from ..program.validate import validate
from .domain import AbstractValue, AnalystContext, discharge
from .stubs import StubRegistry, default_registry


@dataclass(frozen=True)
class CapsuleMeta:
    """Everything the analyzer may know about an input capsule.

    ``evidence`` is present for derived capsules: the abstract state of the
    value the capsule was produced from, so later analyses resume from it.
    """

    policy: Policy
    schema: tuple[str, ...]
    row_count: int | None = None
    evidence: AbstractValue | None = None

    def __post_init__(self) -> None:
        if isinstance(self.policy, str):
            object.__setattr__(self, "policy", parse_policy(self.policy))
        object.__setattr__(self, "schema", tuple(self.schema))


MetaLike = Union[CapsuleMeta, tuple]


def as_meta(m: MetaLike) -> CapsuleMeta:
    if isinstance(m, CapsuleMeta):
        return m
    return CapsuleMeta(*m)


@dataclass(frozen=True)
class TraceEntry:
    stmt: int
    output: str
    requirement: Requirement
    satisfied: bool
    reason: str

    def render(self) -> str:
        status = "SATISFIED" if self.satisfied else "PENDING"
        return f"#{self.stmt} {self.requirement.render()} {status} {self.reason}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "stmt": self.stmt,
            "output": self.output,
            "requirement": self.requirement.render(),
            "status": "SATISFIED" if self.satisfied else "PENDING",
            "reason": self.reason,
        }


@dataclass(frozen=True)
class AnalysisResult:
    per_output: dict[str, Policy]
    compliant: bool
    trace: tuple[TraceEntry, ...]
    evidence: dict[str, AbstractValue] = field(default_factory=dict)
    discharged: dict[str, frozenset] = field(default_factory=dict)
    sources: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def trace_lines(self) -> list[str]:
        return [t.render() for t in self.trace]

    def to_dict(self) -> dict[str, Any]:
        return {
            "compliant": self.compliant,
            "outputs": {
                var: {
                    "residual": print_policy(p),
                    "satisfied": is_satisfied(p),
                    "sources": list(self.sources.get(var, ())),
                    "discharged": sorted(r.render() for r in self.discharged.get(var, ())),
                }
                for var, p in sorted(self.per_output.items())
            },
            "trace": [t.to_dict() for t in self.trace],
        }

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())


def residual_for(policy: Policy, discharged) -> Policy:
    """Remove discharged requirements from every clause, then normalize."""
    gone = frozenset(discharged)
    return normalize(Policy(tuple(c - gone for c in policy.clauses)))


class AnalysisEnv:
    """Variable bindings, input metadata and the registry snapshot of one run."""

    def __init__(self, capsules: Mapping[str, CapsuleMeta], registry: StubRegistry) -> None:
        self.capsules = capsules
        self.registry = registry
        self.values: dict[str, AbstractValue] = {}

    def value(self, var: str) -> AbstractValue:
        try:
            return self.values[var]
        except KeyError:
            raise AnalysisError(f"variable {var!r} has no abstract value") from None


def analyze(
    ir: ProgramIR,
    inputs: Mapping[str, MetaLike],
    ctx: AnalystContext | None = None,
    registry: StubRegistry | None = None,
    max_clauses: int = DEFAULT_MAX_CLAUSES,
) -> AnalysisResult:
    """Compute, per output variable, the residual policy left after the program.

    Only capsule metadata is consulted; payloads are never needed.
    """
    ctx = ctx or AnalystContext()
    registry = registry or default_registry()
    diags = validate(ir)
    if diags:
        raise AnalysisError(
            "program IR is invalid: " + "; ".join(d.render() for d in diags),
            {"diagnostics": [d.to_dict() for d in diags]},
        )
    metas = {cid: as_meta(m) for cid, m in inputs.items()}
    for cid in ir.capsule_ids():
        if cid not in metas:
            raise MissingCapsule(f"capsule {cid!r} is not among the inputs", {"capsule": cid})
    env = AnalysisEnv(metas, registry)

    per_output: dict[str, Policy] = {}
    evidence: dict[str, AbstractValue] = {}
    discharged: dict[str, frozenset] = {}
    sources: dict[str, tuple[str, ...]] = {}
    trace: list[TraceEntry] = []
    for i, stmt in enumerate(ir.statements):
        if isinstance(stmt, Assign):
            op = stmt.expr.op
            if op not in registry:
                raise AnalysisError(f"#{i}: no transfer registered for operator {op!r}", {"stmt": i, "op": op})
            desc = registry.lookup(op)
            if desc.builtin:
                env.values[stmt.var] = desc.transfer(stmt.expr, env)
            else:
                from .transfer import stub_call

                env.values[stmt.var] = stub_call(stmt.expr, env)
            continue
        assert isinstance(stmt, Output)
        if stmt.var in per_output:
            continue
        v = env.value(stmt.var)
        srcs = tuple(sorted(v.sources))
        combined = combine_all([metas[s].policy for s in srcs], max_clauses=max_clauses)
        done: set = set()
        for req in sorted(combined.requirements(), key=lambda r: r.render()):
            ok, why = discharge(req, v, ctx)
            if ok:
                done.add(req)
            trace.append(TraceEntry(i, stmt.var, req, ok, why))
        per_output[stmt.var] = residual_for(combined, done)
        evidence[stmt.var] = v
        discharged[stmt.var] = frozenset(done)
        sources[stmt.var] = srcs
    compliant = all(is_satisfied(p) for p in per_output.values())
    return AnalysisResult(per_output, compliant, tuple(trace), evidence, discharged, sources)
