"""HTTP/JSON front end of the data manager.

Principals authenticate with ``Authorization: Bearer <token>``.  Responses
are canonical JSON; failures use ``{"code", "message", "detail"}``.
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import Response
from pydantic import BaseModel, Field

from ..errors import (
    CapsuleGuardError,
    CsvMalformed,
    DecryptFailed,
    DuplicateCapsule,
    DuplicatePrincipal,
    NotAuthorized,
    NotFound,
    NotOwner,
    ParseError,
    PolicyPending,
    SemanticError,
    UnknownPrincipal,
)
from ..program.ir import dumps_canonical
from .service import ALL, DataManager

STATUS = {
    UnknownPrincipal: 401,
    NotAuthorized: 403,
    NotOwner: 403,
    PolicyPending: 403,
    DecryptFailed: 403,
    NotFound: 404,
    DuplicateCapsule: 409,
    DuplicatePrincipal: 409,
    ParseError: 400,
    SemanticError: 400,
    CsvMalformed: 400,
}


def canonical(data: Any, status: int = 200) -> Response:
    return Response(dumps_canonical(data), status_code=status, media_type="application/json")


def error_response(e: CapsuleGuardError) -> Response:
    status = next((s for cls, s in STATUS.items() if isinstance(e, cls)), 400)
    return canonical(e.to_dict(), status)


class PrincipalIn(BaseModel):
    name: str


class GrantIn(BaseModel):
    analyst: str
    roles: list[str] = Field(default_factory=list)
    purposes: list[str] = Field(default_factory=list)
    scope: list[str] | str = ALL


class JobIn(BaseModel):
    program: str
    purpose: str | None = None
    inputs: list[str] | None = None
    seed: int | None = None


class NoteIn(BaseModel):
    text: str


class OwnerOpenIn(BaseModel):
    owner_key: str


def _key(hex_text: str) -> bytes:
    try:
        return bytes.fromhex(hex_text.strip())
    except ValueError:
        raise DecryptFailed("owner key must be hex encoded") from None


def create_app(manager: DataManager) -> FastAPI:
    app = FastAPI(title="capsuleguard data manager", docs_url=None, redoc_url=None)

    @app.exception_handler(CapsuleGuardError)
    async def _on_error(request: Request, exc: CapsuleGuardError) -> Response:
        return error_response(exc)

    @app.exception_handler(RequestValidationError)
    async def _on_invalid(request: Request, exc: RequestValidationError) -> Response:
        detail = [{"loc": [str(x) for x in e.get("loc", ())], "msg": e.get("msg", "")} for e in exc.errors()]
        return canonical({"code": "BadRequest", "message": "malformed request", "detail": detail}, 422)

    def who(request: Request) -> str:
        header = request.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        return manager.authenticate(token.strip() if scheme.lower() == "bearer" else None)

    @app.post("/principals")
    def add_principal(body: PrincipalIn) -> Response:
        token = manager.register_principal(body.name)
        return canonical({"principal": body.name, "token": token}, 201)

    @app.post("/capsules")
    async def create_capsule(
        request: Request,
        csv: UploadFile = File(...),
        policy: str = Form(...),
        owner_key: str = Form(...),
        schema_text: str | None = Form(None, alias="schema"),
    ) -> Response:
        owner = who(request)
        data = await csv.read()
        cid = manager.create_capsule(owner, data, policy, _key(owner_key), schema=schema_text)
        return canonical({"id": cid}, 201)

    @app.get("/capsules/{capsule_id}")
    def capsule_info(capsule_id: str, request: Request) -> Response:
        return canonical(manager.capsule_info(who(request), capsule_id))

    @app.get("/capsules/{capsule_id}/open")
    def open_capsule(capsule_id: str, request: Request, purpose: str | None = None) -> Response:
        data = manager.open_capsule(who(request), capsule_id, purpose)
        return Response(data, media_type="text/csv")

    @app.post("/capsules/{capsule_id}/owner-open")
    def owner_open(capsule_id: str, body: OwnerOpenIn, request: Request) -> Response:
        data = manager.owner_open(who(request), capsule_id, _key(body.owner_key))
        return Response(data, media_type="text/csv")

    @app.post("/grants")
    def add_grant(body: GrantIn, request: Request) -> Response:
        gid = manager.grant(who(request), body.analyst, body.roles, body.purposes, body.scope)
        return canonical({"grant_id": gid}, 201)

    @app.delete("/grants/{grant_id}")
    def revoke(grant_id: str, request: Request) -> Response:
        manager.revoke(who(request), grant_id)
        return canonical({"revoked": grant_id})

    @app.get("/grants")
    def list_grants(request: Request) -> Response:
        return canonical({"grants": manager.grants_for(who(request))})

    @app.post("/jobs")
    def submit(body: JobIn, request: Request) -> Response:
        jid = manager.submit_job(who(request), body.program, body.purpose, body.inputs, body.seed)
        return canonical({"job_id": jid}, 202)

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str, request: Request, wait: float = 0.0) -> Response:
        principal = who(request)
        if wait > 0:
            manager.wait(job_id, min(wait, 60.0))
        return canonical(manager.job_status(principal, job_id))

    @app.post("/jobs/{job_id}/notes")
    def add_note(job_id: str, body: NoteIn, request: Request) -> Response:
        manager.add_note(who(request), job_id, body.text)
        return canonical({"ok": True})

    return app
