"""The data manager: capsules, grants and the job pipeline.

Every method that could hand out plaintext funnels through
:meth:`DataManager._plaintext`, which is only reached after the policy
check for the requesting principal has passed.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import threading
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

from ..analyzer import AbstractValue, AnalystContext, CapsuleMeta, analyze, residual_for
from ..analyzer.stubs import StubRegistry, default_registry
from ..errors import (
    CapsuleGuardError,
    DuplicateCapsule,
    DuplicatePrincipal,
    ExecutionError,
    NotAuthorized,
    NotFound,
    NotOwner,
    ParseError,
    PolicyPending,
    SemanticError,
    UnknownPrincipal,
    UnsupportedError,
)
from ..executor import Table, execute, read_csv
from ..policy import Policy, Purpose, Role, is_satisfied, parse_policy, print_policy
from ..program import parse_program
from ..program.ir import dumps_canonical
from . import crypto
from .store import Store

ALL = "ALL"
STATUSES = ("Queued", "Analyzed", "Executed", "Rejected")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def capsule_id_for(ciphertext: bytes, policy_text: str, lineage: Iterable[tuple[str, str]]) -> str:
    lineage_text = dumps_canonical([list(x) for x in lineage])
    return sha256_hex(ciphertext + b"\x00" + policy_text.encode() + b"\x00" + lineage_text.encode())


@dataclass(frozen=True)
class DataCapsule:
    id: str
    owner: str
    policy: Policy
    schema: tuple[tuple[str, str], ...]
    row_count: int
    ciphertext_ref: str
    nonce: bytes
    lineage: tuple[tuple[str, str], ...] = ()
    roots: tuple[str, ...] = ()
    key_ref: Mapping[str, str] = field(default_factory=dict)
    evidence: AbstractValue | None = None

    @property
    def derived(self) -> bool:
        return bool(self.lineage)

    def public(self) -> dict[str, Any]:
        """Metadata safe to show anyone entitled to see the capsule exists."""
        return {
            "id": self.id,
            "owner": self.owner,
            "policy": print_policy(self.policy),
            "schema": [{"name": n, "type": t} for n, t in self.schema],
            "row_count": self.row_count,
            "ciphertext_ref": self.ciphertext_ref,
            "nonce": self.nonce.hex(),
            "lineage": [{"parent": p, "program_hash": h} for p, h in self.lineage],
            "derived": self.derived,
        }

    def to_record(self) -> dict[str, Any]:
        rec = self.public()
        rec.update(
            type="capsule",
            roots=list(self.roots),
            key_ref=dict(self.key_ref),
            evidence=self.evidence.to_dict() if self.evidence else None,
        )
        return rec

    @classmethod
    def from_record(cls, r: Mapping[str, Any]) -> DataCapsule:
        return cls(
            id=r["id"],
            owner=r["owner"],
            policy=parse_policy(r["policy"]),
            schema=tuple((c["name"], c["type"]) for c in r["schema"]),
            row_count=int(r["row_count"]),
            ciphertext_ref=r["ciphertext_ref"],
            nonce=bytes.fromhex(r["nonce"]),
            lineage=tuple((x["parent"], x["program_hash"]) for x in r["lineage"]),
            roots=tuple(r["roots"]),
            key_ref=dict(r["key_ref"]),
            evidence=AbstractValue.from_dict(r["evidence"]) if r.get("evidence") else None,
        )


@dataclass(frozen=True)
class Grant:
    id: str
    owner: str
    analyst: str
    roles: frozenset[str]
    purposes: frozenset[str]
    scope: frozenset[str] | str  # capsule ids, or ALL of the owner's capsules

    def covers(self, capsule_id: str, owner: str) -> bool:
        if self.owner != owner:
            return False
        return self.scope == ALL or capsule_id in self.scope

    def admits(self, purpose: str | None) -> bool:
        return purpose is None or purpose in self.purposes

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "owner": self.owner,
            "analyst": self.analyst,
            "roles": sorted(self.roles),
            "purposes": sorted(self.purposes),
            "scope": self.scope if self.scope == ALL else sorted(self.scope),
        }


@dataclass
class Job:
    id: str
    analyst: str
    purpose: str | None
    program_source: str
    program_hash: str
    inputs: tuple[str, ...]
    seed: int
    status: str = "Queued"
    outputs: dict[str, dict[str, Any]] = field(default_factory=dict)
    result_ref: str | None = None
    result_nonce: str | None = None
    diagnostics: list[dict[str, Any]] = field(default_factory=list)
    error: dict[str, Any] | None = None
    trace: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_record(self) -> dict[str, Any]:
        return {
            "type": "job",
            "id": self.id,
            "analyst": self.analyst,
            "purpose": self.purpose,
            "program_source": self.program_source,
            "program_hash": self.program_hash,
            "inputs": list(self.inputs),
            "seed": self.seed,
            "status": self.status,
            "outputs": self.outputs,
            "result_ref": self.result_ref,
            "result_nonce": self.result_nonce,
            "diagnostics": self.diagnostics,
            "error": self.error,
            "trace": self.trace,
            "notes": self.notes,
        }

    @classmethod
    def from_record(cls, r: Mapping[str, Any]) -> Job:
        fields = {k: v for k, v in r.items() if k != "type"}
        fields["inputs"] = tuple(fields["inputs"])
        return cls(**fields)


class DataManager:
    """Capsule store and job pipeline behind one process boundary.

    ``sync=True`` runs jobs inline on submission, which the CLI's local mode
    and the tests use; otherwise jobs run on a thread pool.
    """

    def __init__(
        self,
        store_path: str,
        *,
        registry: StubRegistry | None = None,
        sync: bool = False,
        max_workers: int = 4,
    ) -> None:
        self.store = Store(store_path)
        self.registry = registry or default_registry()
        self.sync = sync
        self._lock = threading.RLock()
        self._principals: dict[str, str] = {}  # token digest -> principal
        self._names: set[str] = set()
        self._capsules: dict[str, DataCapsule] = {}
        self._grants: Mapping[str, Grant] = {}
        self._jobs: dict[str, Job] = {}
        self._done: dict[str, threading.Event] = {}
        self._pool = None if sync else ThreadPoolExecutor(max_workers=max_workers)
        self._replay()

    # -- startup ---------------------------------------------------------------

    def _replay(self) -> None:
        grants: dict[str, Grant] = {}
        for r in self.store.replay():
            kind = r["type"]
            if kind == "principal":
                self._principals[r["token_sha256"]] = r["name"]
                self._names.add(r["name"])
            elif kind == "capsule":
                c = DataCapsule.from_record(r)
                self._capsules[c.id] = c
            elif kind == "grant":
                grants[r["id"]] = Grant(
                    r["id"],
                    r["owner"],
                    r["analyst"],
                    frozenset(r["roles"]),
                    frozenset(r["purposes"]),
                    ALL if r["scope"] == ALL else frozenset(r["scope"]),
                )
            elif kind == "revoke":
                grants.pop(r["id"], None)
            elif kind == "job":
                job = Job.from_record(r)
                self._jobs[job.id] = job
        self._grants = grants
        for job in self._jobs.values():
            ev = self._done.setdefault(job.id, threading.Event())
            if job.status == "Queued":
                # At-most-once: an interrupted job is not rerun.
                job.status = "Rejected"
                job.error = {"code": "Interrupted", "message": "manager stopped before the job finished"}
                self.store.append(job.to_record())
            ev.set()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    # -- principals ---------------------------------------------------------------

    def register_principal(self, name: str) -> str:
        """Create a principal and return its bearer token (shown once)."""
        if not name or not name.replace("-", "").replace("_", "").replace(".", "").isalnum():
            raise SemanticError(f"bad principal name {name!r}")
        token = secrets.token_hex(32)
        with self._lock:
            if name in self._names:
                raise DuplicatePrincipal(f"principal {name!r} already exists")
            digest = sha256_hex(token.encode())
            self.store.append({"type": "principal", "name": name, "token_sha256": digest})
            self._principals[digest] = name
            self._names.add(name)
        return token

    def authenticate(self, token: str | None) -> str:
        if not token:
            raise UnknownPrincipal("missing credentials")
        name = self._principals.get(sha256_hex(token.encode()))
        if name is None:
            raise UnknownPrincipal("unknown token")
        return name

    def _known(self, principal: str) -> None:
        if principal not in self._names:
            raise UnknownPrincipal(f"unknown principal {principal!r}")

    # -- capsules -------------------------------------------------------------------

    def _capsule(self, capsule_id: str) -> DataCapsule:
        c = self._capsules.get(capsule_id)
        if c is None:
            raise NotFound(f"no capsule {capsule_id!r}")
        return c

    def create_capsule(
        self,
        owner: str,
        table_csv: bytes,
        policy_text: str,
        owner_key: bytes,
        *,
        schema: Any = None,
        nonce: bytes | None = None,
    ) -> str:
        self._known(owner)
        policy = parse_policy(policy_text)
        table = read_csv(table_csv, schema)
        owner_key = crypto.check_key(owner_key)
        canonical = print_policy(policy)
        nonce = nonce or crypto.fresh_nonce()
        ct = crypto.encrypt(owner_key, nonce, bytes(table_csv), canonical.encode())
        cid = capsule_id_for(ct, canonical, ())
        wnonce, wrapped = crypto.wrap_key(self.store.secret, owner_key, cid)
        capsule = DataCapsule(
            id=cid,
            owner=owner,
            policy=policy,
            schema=table.schema,
            row_count=len(table),
            ciphertext_ref="",
            nonce=nonce,
            roots=(cid,),
            key_ref={"kind": "sealed", "nonce": wnonce.hex(), "wrapped": wrapped.hex()},
        )
        with self._lock:
            if cid in self._capsules:
                raise DuplicateCapsule(f"capsule {cid} already exists", {"id": cid})
            capsule = replace(capsule, ciphertext_ref=self.store.put_blob(ct))
            self.store.append(capsule.to_record())
            self._capsules[cid] = capsule
        return cid

    def _capsule_key(self, c: DataCapsule) -> bytes:
        ref = c.key_ref
        if ref.get("kind") == "sealed":
            return crypto.unwrap_key(self.store.secret, bytes.fromhex(ref["nonce"]), bytes.fromhex(ref["wrapped"]), c.id)
        if ref.get("kind") == "derived":
            return crypto.derive_key(self.store.secret, f"derived:{ref['job']}:{ref['output']}")
        raise CapsuleGuardError(f"capsule {c.id} has no usable key reference")

    def _plaintext(self, c: DataCapsule, key: bytes | None = None) -> bytes:
        key = self._capsule_key(c) if key is None else key
        ct = self.store.get_blob(c.ciphertext_ref)
        return crypto.decrypt(key, c.nonce, ct, print_policy(c.policy).encode())

    def _table(self, c: DataCapsule) -> Table:
        return read_csv(self._plaintext(c), dict(c.schema))

    def capsule_info(self, principal: str, capsule_id: str) -> dict[str, Any]:
        self._known(principal)
        c = self._capsule(capsule_id)
        owners = {self._capsule(r).owner for r in c.roots}
        if principal != c.owner and principal not in owners:
            self._authorize(principal, [capsule_id], None)
        return c.public()

    def owner_open(self, owner: str, capsule_id: str, owner_key: bytes) -> bytes:
        """An owner reads back their own root capsule with their own key."""
        self._known(owner)
        c = self._capsule(capsule_id)
        if c.derived or c.owner != owner:
            raise NotOwner(f"{owner!r} does not own root capsule {capsule_id}")
        return self._plaintext(c, crypto.check_key(owner_key))

    def open_capsule(self, analyst: str, capsule_id: str, purpose: str | None = None) -> bytes:
        """Plaintext only once the policy is satisfied for this analyst."""
        self._known(analyst)
        if capsule_id not in self._capsules:
            raise NotAuthorized(f"no grant covers capsule {capsule_id}")
        c = self._capsules[capsule_id]
        ctx = self._authorize(analyst, [capsule_id], purpose)
        done = {r for r in c.policy.requirements() if isinstance(r, Role) and r.role in ctx.roles}
        done |= {r for r in c.policy.requirements() if isinstance(r, Purpose) and r.purpose == ctx.purpose}
        residual = residual_for(c.policy, done)
        if not is_satisfied(residual):
            raise PolicyPending(print_policy(residual))
        return self._plaintext(c)

    # -- grants ---------------------------------------------------------------------

    def grant(
        self,
        owner: str,
        analyst: str,
        roles: Iterable[str] = (),
        purposes: Iterable[str] = (),
        scope: Iterable[str] | str = ALL,
    ) -> str:
        self._known(owner)
        self._known(analyst)
        if scope != ALL:
            scope = frozenset(scope)
            for cid in scope:
                c = self._capsules.get(cid)
                if c is None or c.owner != owner or c.derived:
                    raise NotOwner(f"{owner!r} does not own root capsule {cid}")
        g = Grant(
            id="g-" + secrets.token_hex(8),
            owner=owner,
            analyst=analyst,
            roles=frozenset(roles),
            purposes=frozenset(purposes),
            scope=scope,
        )
        with self._lock:
            rec = g.to_dict()
            rec["type"] = "grant"
            self.store.append(rec)
            new = dict(self._grants)
            new[g.id] = g
            self._grants = new  # readers keep whichever snapshot they took
        return g.id

    def revoke(self, owner: str, grant_id: str) -> None:
        self._known(owner)
        with self._lock:
            g = self._grants.get(grant_id)
            if g is None:
                raise NotFound(f"no active grant {grant_id!r}")
            if g.owner != owner:
                raise NotOwner(f"grant {grant_id} belongs to another owner")
            self.store.append({"type": "revoke", "id": grant_id})
            new = dict(self._grants)
            del new[grant_id]
            self._grants = new

    def grants_for(self, principal: str) -> list[dict[str, Any]]:
        return [g.to_dict() for g in self._grants.values() if principal in (g.owner, g.analyst)]

    def _authorize(
        self,
        analyst: str,
        capsule_ids: Iterable[str],
        purpose: str | None,
        grants: Mapping[str, Grant] | None = None,
    ) -> AnalystContext:
        """Roles the analyst holds on every input; NotAuthorized if any root is uncovered."""
        grants = self._grants if grants is None else grants
        mine = [g for g in grants.values() if g.analyst == analyst]
        roles: frozenset[str] | None = None
        for cid in capsule_ids:
            c = self._capsules.get(cid)
            if c is None:
                raise NotAuthorized(f"no grant covers capsule {cid}")
            for root in c.roots:
                owner = self._capsules[root].owner
                covering = [g for g in mine if g.covers(root, owner) and g.admits(purpose)]
                if not covering:
                    why = f" for purpose {purpose}" if purpose else ""
                    raise NotAuthorized(f"no grant covers capsule {cid}{why}", {"capsule": cid})
                held = frozenset().union(*(g.roles for g in covering))
                roles = held if roles is None else roles & held
        return AnalystContext(roles or frozenset(), purpose)

    # -- jobs ---------------------------------------------------------------------------

    def submit_job(
        self,
        analyst: str,
        program_source: str,
        purpose: str | None = None,
        inputs: Iterable[str] | None = None,
        seed: int | None = None,
    ) -> str:
        self._known(analyst)
        if inputs is None:
            try:
                inputs = parse_program(program_source, self.registry).capsule_ids()
            except (ParseError, UnsupportedError, SemanticError):
                inputs = ()
        inputs = tuple(dict.fromkeys(inputs))
        ctx = self._authorize(analyst, inputs, purpose)  # grant snapshot taken here
        job = Job(
            id="j-" + secrets.token_hex(8),
            analyst=analyst,
            purpose=purpose,
            program_source=program_source,
            program_hash=sha256_hex(program_source.encode()),
            inputs=inputs,
            seed=secrets.randbits(63) if seed is None else int(seed),
        )
        with self._lock:
            self._jobs[job.id] = job
            self._done[job.id] = threading.Event()
            self.store.append(job.to_record())
        if self._pool is None:
            self._run(job, ctx)
        else:
            self._pool.submit(self._run, job, ctx)
        return job.id

    def wait(self, job_id: str, timeout: float | None = None) -> bool:
        ev = self._done.get(job_id)
        if ev is None:
            raise NotFound(f"no job {job_id!r}")
        return ev.wait(timeout)

    def _finish(self, job: Job) -> None:
        with self._lock:
            self.store.append(job.to_record())
        self._done[job.id].set()

    def _reject(self, job: Job, code: str, message: str, diagnostics=()) -> None:
        job.status = "Rejected"
        job.error = {"code": code, "message": message}
        job.diagnostics = list(diagnostics)
        self._finish(job)

    def _run(self, job: Job, ctx: AnalystContext) -> None:
        try:
            self._pipeline(job, ctx)
        except Exception as e:  # keep the worker alive; record the failure
            if job.status == "Queued":
                self._reject(job, getattr(e, "code", "InternalError"), str(e))

    def _pipeline(self, job: Job, ctx: AnalystContext) -> None:
        try:
            ir = parse_program(job.program_source, self.registry)
        except (ParseError, UnsupportedError, SemanticError) as e:
            diag = {"code": e.code, "message": e.message}
            diag.update({k: getattr(e, k) for k in ("line", "column") if getattr(e, k, None) is not None})
            self._reject(job, "ParseFailed", e.message, [diag])
            return
        extra = [c for c in ir.capsule_ids() if c not in job.inputs]
        if extra:
            self._reject(job, "NotAuthorized", f"program reads undeclared capsule(s) {extra}")
            return
        metas = {}
        for cid in job.inputs:
            c = self._capsules[cid]
            metas[cid] = CapsuleMeta(c.policy, tuple(n for n, _ in c.schema), c.row_count, c.evidence)
        try:
            result = analyze(ir, metas, ctx, self.registry)
        except CapsuleGuardError as e:
            self._reject(job, "AnalysisFailed", e.message, [e.to_dict()])
            return
        job.trace = result.trace_lines()
        try:
            tables = {cid: self._table(self._capsules[cid]) for cid in ir.capsule_ids()}
            salt = crypto.derive_key(self.store.secret, f"salt:{job.id}")
            outcome = execute(ir, tables, seed=job.seed, registry=self.registry, salt=salt)
        except ExecutionError as e:
            self._reject(job, "ExecFailed", e.message, [e.to_dict()])
            return
        except CapsuleGuardError as e:
            self._reject(job, "ExecFailed", e.message, [e.to_dict()])
            return
        if result.compliant:
            payload = dumps_canonical({v: t.to_csv().decode() for v, t in outcome.outputs.items()}).encode()
            nonce = crypto.fresh_nonce()
            ct = crypto.encrypt(crypto.derive_key(self.store.secret, f"job:{job.id}"), nonce, payload)
            job.result_ref = self.store.put_blob(ct)
            job.result_nonce = nonce.hex()
            job.outputs = {v: {"residual": "EMPTY", "satisfied": True} for v in outcome.outputs}
            job.status = "Executed"
        else:
            for var, table in outcome.outputs.items():
                cid = self._derive(job, var, table, result.per_output[var], result.evidence[var], result.sources[var])
                residual = result.per_output[var]
                job.outputs[var] = {
                    "residual": print_policy(residual),
                    "satisfied": is_satisfied(residual),
                    "capsule_id": cid,
                }
            job.status = "Analyzed"
        self._finish(job)

    def _derive(
        self,
        job: Job,
        var: str,
        table: Table,
        policy: Policy,
        evidence: AbstractValue,
        sources: tuple[str, ...],
    ) -> str:
        key = crypto.derive_key(self.store.secret, f"derived:{job.id}:{var}")
        canonical = print_policy(policy)
        nonce = crypto.fresh_nonce()
        ct = crypto.encrypt(key, nonce, table.to_csv(), canonical.encode())
        lineage = tuple((s, job.program_hash) for s in sources)
        cid = capsule_id_for(ct, canonical, lineage)
        roots = tuple(sorted({r for s in sources for r in self._capsules[s].roots}))
        capsule = DataCapsule(
            id=cid,
            owner=job.analyst,
            policy=policy,
            schema=table.schema,
            row_count=len(table),
            ciphertext_ref=self.store.put_blob(ct),
            nonce=nonce,
            lineage=lineage,
            roots=roots,
            key_ref={"kind": "derived", "job": job.id, "output": var},
            evidence=evidence,
        )
        with self._lock:
            self.store.append(capsule.to_record())
            self._capsules[cid] = capsule
        return cid

    def job_status(self, principal: str, job_id: str) -> dict[str, Any]:
        """The analyst's view, or the owners' view without the program text."""
        self._known(principal)
        job = self._jobs.get(job_id)
        if job is None:
            raise NotFound(f"no job {job_id!r}")
        view: dict[str, Any] = {
            "id": job.id,
            "analyst": job.analyst,
            "purpose": job.purpose,
            "inputs": list(job.inputs),
            "program_hash": job.program_hash,
            "status": job.status,
            "notes": list(job.notes),
            "residuals": [
                {"output": v, "residual": o["residual"], "capsule_id": o.get("capsule_id")}
                for v, o in sorted(job.outputs.items())
            ],
        }
        if principal == job.analyst:
            view.update(
                program_source=job.program_source,
                diagnostics=job.diagnostics,
                error=job.error,
                trace=job.trace,
                seed=job.seed,
            )
            if job.status == "Executed" and job.result_ref:
                key = crypto.derive_key(self.store.secret, f"job:{job.id}")
                blob = self.store.get_blob(job.result_ref)
                view["result"] = json.loads(crypto.decrypt(key, bytes.fromhex(job.result_nonce), blob))
            return view
        owners = {self._capsules[r].owner for c in job.inputs if c in self._capsules for r in self._capsules[c].roots}
        if principal in owners:
            return view
        raise NotAuthorized(f"{principal!r} may not view job {job_id}")

    def add_note(self, analyst: str, job_id: str, text: str) -> None:
        """Owner-facing summary channel written by the job's analyst."""
        self._known(analyst)
        job = self._jobs.get(job_id)
        if job is None:
            raise NotFound(f"no job {job_id!r}")
        if job.analyst != analyst:
            raise NotAuthorized("only the submitting analyst may annotate a job")
        with self._lock:
            job.notes.append(str(text))
            self.store.append(job.to_record())
