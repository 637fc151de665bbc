"""Command-line front end.

Exit codes: 0 success or compliant, 2 well-formed but policy pending, 1 any
other error, 64 usage error.  ``--output-format json`` prints one canonical
JSON document per invocation, including for errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Any, TextIO

from . import __version__
from .analyzer import AnalystContext, CapsuleMeta, analyze
from .errors import CapsuleGuardError, PolicyPending
from .policy import implies, parse_policy, print_policy
from .program import parse_program
from .program.ir import dumps_canonical

EXIT_OK, EXIT_ERROR, EXIT_PENDING, EXIT_USAGE = 0, 1, 2, 64
DEFAULT_STORE = ".capsuleguard"


class UsageError(Exception):
    pass


class RemoteError(CapsuleGuardError):
    def __init__(self, code: str, message: str, detail: Any = None) -> None:
        super().__init__(message, detail)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which means "pending" here
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- backends -------------------------------------------------------------------


class LocalBackend:
    """Runs the data manager in-process against a store directory."""

    def __init__(self, store: str) -> None:
        from .manager import DataManager

        self.m = DataManager(store, sync=True)

    def _who(self, token: str | None) -> str:
        return self.m.authenticate(token)

    def add_principal(self, name: str) -> dict:
        return {"principal": name, "token": self.m.register_principal(name)}

    def create_capsule(self, token, csv: bytes, policy: str, key: bytes, schema: str | None) -> dict:
        return {"id": self.m.create_capsule(self._who(token), csv, policy, key, schema=schema)}

    def capsule_info(self, token, cid: str) -> dict:
        return self.m.capsule_info(self._who(token), cid)

    def open_capsule(self, token, cid: str, purpose: str | None) -> bytes:
        return self.m.open_capsule(self._who(token), cid, purpose)

    def owner_open(self, token, cid: str, key: bytes) -> bytes:
        return self.m.owner_open(self._who(token), cid, key)

    def grant(self, token, analyst, roles, purposes, scope) -> dict:
        return {"grant_id": self.m.grant(self._who(token), analyst, roles, purposes, scope)}

    def revoke(self, token, gid: str) -> dict:
        self.m.revoke(self._who(token), gid)
        return {"revoked": gid}

    def submit_job(self, token, program, purpose, inputs, seed) -> dict:
        return {"job_id": self.m.submit_job(self._who(token), program, purpose, inputs, seed)}

    def job_status(self, token, jid: str, wait: float) -> dict:
        who = self._who(token)
        if wait:
            self.m.wait(jid, wait)
        return self.m.job_status(who, jid)

    def add_note(self, token, jid: str, text: str) -> dict:
        self.m.add_note(self._who(token), jid, text)
        return {"ok": True}


class RemoteBackend:
    """Talks to ``capsuleguard serve`` over HTTP."""

    def __init__(self, url: str, client: Any = None) -> None:
        if client is None:
            import httpx

            client = httpx.Client(base_url=url.rstrip("/"), timeout=120.0)
        self.client = client

    def _call(self, method: str, path: str, token: str | None, raw: bool = False, **kw) -> Any:
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        r = self.client.request(method, path, headers=headers, **kw)
        if r.status_code >= 400:
            try:
                body = r.json()
            except ValueError:
                raise RemoteError("HttpError", f"HTTP {r.status_code}: {r.text[:200]}") from None
            if body.get("code") == "PolicyPending":
                raise PolicyPending(body["detail"]["residual"])
            raise RemoteError(body.get("code", "HttpError"), body.get("message", ""), body.get("detail"))
        return r.content if raw else r.json()

    def add_principal(self, name: str) -> dict:
        return self._call("POST", "/principals", None, json={"name": name})

    def create_capsule(self, token, csv, policy, key, schema) -> dict:
        data = {"policy": policy, "owner_key": key.hex()}
        if schema is not None:
            data["schema"] = schema
        return self._call("POST", "/capsules", token, data=data, files={"csv": ("table.csv", csv, "text/csv")})

    def capsule_info(self, token, cid) -> dict:
        return self._call("GET", f"/capsules/{cid}", token)

    def open_capsule(self, token, cid, purpose) -> bytes:
        params = {"purpose": purpose} if purpose else {}
        return self._call("GET", f"/capsules/{cid}/open", token, raw=True, params=params)

    def owner_open(self, token, cid, key) -> bytes:
        return self._call("POST", f"/capsules/{cid}/owner-open", token, raw=True, json={"owner_key": key.hex()})

    def grant(self, token, analyst, roles, purposes, scope) -> dict:
        body = {"analyst": analyst, "roles": list(roles), "purposes": list(purposes), "scope": scope}
        return self._call("POST", "/grants", token, json=body)

    def revoke(self, token, gid) -> dict:
        return self._call("DELETE", f"/grants/{gid}", token)

    def submit_job(self, token, program, purpose, inputs, seed) -> dict:
        body = {"program": program, "purpose": purpose, "inputs": inputs, "seed": seed}
        return self._call("POST", "/jobs", token, json=body)

    def job_status(self, token, jid, wait) -> dict:
        return self._call("GET", f"/jobs/{jid}", token, params={"wait": wait} if wait else {})

    def add_note(self, token, jid, text) -> dict:
        return self._call("POST", f"/jobs/{jid}/notes", token, json={"text": text})


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="capsuleguard", description="Policy-checked analysis of encrypted data capsules.")
    p.add_argument("--version", action="version", version=f"capsuleguard {__version__}")
    p.add_argument("--store", help="store directory for local mode (env CAPSULEGUARD_STORE)")
    p.add_argument("--server", help="URL of a running manager; selects server mode")
    p.add_argument("--token", help="bearer token of the acting principal (env CAPSULEGUARD_TOKEN)")
    p.add_argument("--keyfile", help="owner key file (64 hex digits)")
    p.add_argument("--output-format", choices=("text", "json"), default="text")
    p.add_argument("--seed", type=int, help="64-bit seed for deterministic execution")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pol = sub.add_parser("policy", help="check and compare policies").add_subparsers(dest="action", required=True)
    c = pol.add_parser("check", help="parse, normalize and print a policy file")
    c.add_argument("file")
    c = pol.add_parser("implies", help="does policy A imply policy B?")
    c.add_argument("a")
    c.add_argument("b")

    prog = sub.add_parser("program", help="program frontend").add_subparsers(dest="action", required=True)
    c = prog.add_parser("parse", help="lower a program to IR JSON")
    c.add_argument("src")

    c = sub.add_parser("analyze", help="statically check a program against capsule policies")
    c.add_argument("src")
    c.add_argument(
        "--capsule",
        action="append",
        default=[],
        metavar="ID=POLICYFILE:COLS:ROWS",
        help="input capsule metadata; COLS is comma separated",
    )
    c.add_argument("--role", action="append", default=[])
    c.add_argument("--purpose")

    c = sub.add_parser("keygen", help="write a fresh 256-bit owner key")
    c.add_argument("--out", required=True)

    pr = sub.add_parser("principal", help="principals").add_subparsers(dest="action", required=True)
    c = pr.add_parser("add", help="register a principal and print its token")
    c.add_argument("name")

    cap = sub.add_parser("capsule", help="capsules").add_subparsers(dest="action", required=True)
    c = cap.add_parser("create", help="encrypt a CSV under a policy")
    c.add_argument("csv")
    c.add_argument("--policy", required=True, help="policy file")
    c.add_argument("--schema", help="sidecar schema JSON overriding type inference")
    c = cap.add_parser("open", help="fetch plaintext if the policy allows it")
    c.add_argument("id")
    c.add_argument("--purpose")
    c.add_argument("--owner", action="store_true", help="open your own root capsule with --keyfile")
    c.add_argument("--out", help="write the CSV here instead of stdout")
    c = cap.add_parser("info", help="show capsule metadata")
    c.add_argument("id")

    gr = sub.add_parser("grant", help="grants").add_subparsers(dest="action", required=True)
    c = gr.add_parser("add", help="authorize an analyst")
    c.add_argument("--analyst", required=True)
    c.add_argument("--role", action="append", default=[])
    c.add_argument("--purpose", action="append", default=[])
    c.add_argument("--scope", action="append", help="capsule id (repeatable); default: all your capsules")
    c = gr.add_parser("revoke", help="revoke a grant")
    c.add_argument("grant_id")

    jb = sub.add_parser("job", help="jobs").add_subparsers(dest="action", required=True)
    c = jb.add_parser("submit", help="submit a program")
    c.add_argument("src")
    c.add_argument("--purpose")
    c.add_argument("--input", action="append", help="declared input capsule id (repeatable)")
    c.add_argument("--wait", type=float, default=30.0, help="seconds to wait for completion (server mode)")
    c = jb.add_parser("status", help="show a job")
    c.add_argument("job_id")
    c.add_argument("--wait", type=float, default=0.0)
    c = jb.add_parser("note", help="attach an owner-facing note to your job")
    c.add_argument("job_id")
    c.add_argument("text")

    c = sub.add_parser("serve", help="run the HTTP manager")
    c.add_argument("--addr", default="127.0.0.1:8750", help="HOST:PORT")
    c.add_argument("--simulate-tee", action="store_true", default=True, help="(always on) see the threat model")
    return p


# -- command implementations ------------------------------------------------------


class Cli:
    def __init__(self, args: argparse.Namespace, out: TextIO, err: TextIO, http_client: Any = None) -> None:
        self.args = args
        self.http_client = http_client
        self.out = out
        self.err = err
        self.json = args.output_format == "json"

    def emit(self, data: Any, text: str) -> None:
        print(dumps_canonical(data) if self.json else text, file=self.out)

    def token(self) -> str | None:
        return self.args.token or os.environ.get("CAPSULEGUARD_TOKEN")

    def backend(self):
        env_store = os.environ.get("CAPSULEGUARD_STORE")
        if self.args.server:
            if self.args.store:
                raise UsageError("--store and --server are mutually exclusive")
            return RemoteBackend(self.args.server, self.http_client)
        return LocalBackend(self.args.store or env_store or DEFAULT_STORE)

    def key(self) -> bytes:
        if not self.args.keyfile:
            raise UsageError("this command needs --keyfile")
        text = Path(self.args.keyfile).read_text().strip()
        try:
            key = bytes.fromhex(text)
        except ValueError:
            key = b""
        if len(key) != 32:
            raise CapsuleGuardError(f"{self.args.keyfile} does not hold a 256-bit hex key")
        return key

    # policy / program / analyze are purely local

    def policy_check(self) -> int:
        p = parse_policy(Path(self.args.file).read_text())
        text = print_policy(p)
        self.emit({"policy": text}, text)
        return EXIT_OK

    def policy_implies(self) -> int:
        a = parse_policy(Path(self.args.a).read_text())
        b = parse_policy(Path(self.args.b).read_text())
        ans = implies(a, b)
        self.emit({"implies": ans}, "true" if ans else "false")
        return EXIT_OK

    def program_parse(self) -> int:
        ir = parse_program(Path(self.args.src).read_text())
        print(ir.to_json(), file=self.out)
        return EXIT_OK

    def analyze(self) -> int:
        ir = parse_program(Path(self.args.src).read_text())
        inputs = {}
        for arg in self.args.capsule:
            cid, eq, rest = arg.partition("=")
            parts = rest.rsplit(":", 2)
            if not eq or len(parts) != 3 or not cid:
                raise UsageError(f"--capsule expects ID=POLICYFILE:COLS:ROWS, got {arg!r}")
            pfile, cols, rows = parts
            try:
                row_count = int(rows) if rows else None
            except ValueError:
                raise UsageError(f"row count {rows!r} is not an integer") from None
            columns = tuple(c.strip() for c in cols.split(",") if c.strip())
            inputs[cid] = CapsuleMeta(parse_policy(Path(pfile).read_text()), columns, row_count)
        ctx = AnalystContext(frozenset(self.args.role), self.args.purpose)
        result = analyze(ir, inputs, ctx)
        lines = [f"output {v}: {print_policy(p)}" for v, p in sorted(result.per_output.items())]
        lines += result.trace_lines()
        lines.append("compliant" if result.compliant else "pending")
        self.emit(result.to_dict(), "\n".join(lines))
        return EXIT_OK if result.compliant else EXIT_PENDING

    def keygen(self) -> int:
        from .manager.crypto import generate_key

        path = Path(self.args.out)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(generate_key().hex() + "\n")
        self.emit({"keyfile": str(path)}, f"wrote {path}")
        return EXIT_OK

    def principal_add(self) -> int:
        r = self.backend().add_principal(self.args.name)
        self.emit(r, r["token"])
        return EXIT_OK

    def capsule_create(self) -> int:
        csv = Path(self.args.csv).read_bytes()
        policy = Path(self.args.policy).read_text()
        schema = Path(self.args.schema).read_text() if self.args.schema else None
        r = self.backend().create_capsule(self.token(), csv, policy, self.key(), schema)
        self.emit(r, r["id"])
        return EXIT_OK

    def capsule_open(self) -> int:
        b = self.backend()
        if self.args.owner:
            data = b.owner_open(self.token(), self.args.id, self.key())
        else:
            data = b.open_capsule(self.token(), self.args.id, self.args.purpose)
        if self.args.out:
            Path(self.args.out).write_bytes(data)
            self.emit({"written": self.args.out, "bytes": len(data)}, f"wrote {self.args.out}")
        elif self.json:
            self.emit({"csv": data.decode("utf-8")}, "")
        else:
            self.out.write(data.decode("utf-8"))
        return EXIT_OK

    def capsule_info(self) -> int:
        r = self.backend().capsule_info(self.token(), self.args.id)
        text = "\n".join(f"{k}: {v}" for k, v in sorted(r.items()))
        self.emit(r, text)
        return EXIT_OK

    def grant_add(self) -> int:
        from .manager.service import ALL

        scope = self.args.scope or ALL
        r = self.backend().grant(self.token(), self.args.analyst, self.args.role, self.args.purpose, scope)
        self.emit(r, r["grant_id"])
        return EXIT_OK

    def grant_revoke(self) -> int:
        r = self.backend().revoke(self.token(), self.args.grant_id)
        self.emit(r, f"revoked {self.args.grant_id}")
        return EXIT_OK

    def _job_report(self, view: dict) -> int:
        lines = [f"job {view['id']}: {view['status']}"]
        if view.get("error"):
            lines.append(f"error {view['error']['code']}: {view['error']['message']}")
        for d in view.get("diagnostics") or ():
            lines.append(f"  {d}")
        for name, csv in sorted((view.get("result") or {}).items()):
            lines.append(f"== {name}")
            lines.append(csv.rstrip("\r\n").replace("\r\n", "\n"))
        for r in view.get("residuals") or ():
            if r.get("capsule_id") or r["residual"] != "EMPTY":
                lines.append(f"output {r['output']}: {r['residual']} (capsule {r.get('capsule_id')})")
        for n in view.get("notes") or ():
            lines.append(f"note: {n}")
        self.emit(view, "\n".join(lines))
        status = view["status"]
        if status == "Rejected":
            return EXIT_ERROR
        if status == "Analyzed" and any(r["residual"] != "EMPTY" for r in view.get("residuals", ())):
            return EXIT_PENDING
        return EXIT_OK

    def job_submit(self) -> int:
        b = self.backend()
        program = Path(self.args.src).read_text()
        r = b.submit_job(self.token(), program, self.args.purpose, self.args.input, self.args.seed)
        view = b.job_status(self.token(), r["job_id"], self.args.wait)
        if view["status"] == "Queued":
            self.emit(view, f"job {view['id']}: Queued")
            return EXIT_OK
        return self._job_report(view)

    def job_status(self) -> int:
        return self._job_report(self.backend().job_status(self.token(), self.args.job_id, self.args.wait))

    def job_note(self) -> int:
        r = self.backend().add_note(self.token(), self.args.job_id, self.args.text)
        self.emit(r, "noted")
        return EXIT_OK

    def serve(self) -> int:
        import uvicorn

        from .manager import DataManager
        from .manager.http import create_app

        if self.args.server:
            raise UsageError("serve runs a server; it does not take --server")
        host, _, port = self.args.addr.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--addr expects HOST:PORT, got {self.args.addr!r}")
        store = self.args.store or os.environ.get("CAPSULEGUARD_STORE") or DEFAULT_STORE
        print(
            "SIMULATED TEE: the manager process stands in for a hardware enclave. "
            "Data is NOT protected from whoever controls this host.",
            file=self.err,
        )
        manager = DataManager(store)
        try:
            uvicorn.run(create_app(manager), host=host, port=int(port), log_level="warning")
        finally:
            manager.close()
        return EXIT_OK

    def dispatch(self) -> int:
        name = self.args.command
        action = getattr(self.args, "action", None)
        method = getattr(self, f"{name}_{action}" if action else name)
        return method()


def run(
    argv: list[str] | None = None,
    out: TextIO | None = None,
    err: TextIO | None = None,
    http_client: Any = None,
) -> int:
    """Execute one command; ``http_client`` replaces the server-mode transport (tests)."""
    out = out or sys.stdout
    err = err or sys.stderr
    json_mode = False
    try:
        args = build_parser().parse_args(argv)
        json_mode = args.output_format == "json"
        return Cli(args, out, err, http_client).dispatch()
    except UsageError as e:
        print(str(e), file=err)
        return EXIT_USAGE
    except PolicyPending as e:
        if json_mode:
            print(dumps_canonical(e.to_dict()), file=out)
        else:
            print(f"pending: {e.residual}", file=out)
        return EXIT_PENDING
    except (CapsuleGuardError, OSError) as e:
        body = e.to_dict() if isinstance(e, CapsuleGuardError) else {
            "code": "IOError",
            "message": str(e),
            "detail": None,
        }
        if json_mode:
            print(dumps_canonical(body), file=out)
        else:
            print(f"error {body['code']}: {body['message']}", file=err)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


__all__ = ["main", "run", "build_parser"]
