from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from capsuleguard.manager.crypto import generate_key
from capsuleguard.manager.http import create_app
from capsuleguard.manager.service import DataManager
from capsuleguard.program import dumps_canonical

from conftest import BUDGET_POLICY, TRANSACTIONS, program


@pytest.fixture
def api(tmp_path):
    dm = DataManager(str(tmp_path / "store"), sync=True)
    with TestClient(create_app(dm)) as client:
        yield client
    dm.close()


def auth(token: str) -> dict:
    return {"Authorization": f"Bearer {token}"}


def principal(api, name: str) -> str:
    r = api.post("/principals", json={"name": name})
    assert r.status_code == 201
    return r.json()["token"]


def upload(api, token: str, key: bytes, csv: bytes = TRANSACTIONS, policy: str = BUDGET_POLICY, **extra):
    data = {"policy": policy, "owner_key": key.hex(), **extra}
    return api.post("/capsules", headers=auth(token), data=data, files={"csv": ("t.csv", csv, "text/csv")})


@pytest.fixture
def setup(api):
    owner, analyst = principal(api, "alice"), principal(api, "bob")
    key = generate_key()
    cid = upload(api, owner, key).json()["id"]
    return owner, analyst, key, cid


def test_responses_are_canonical_json(api, setup):
    owner, _, _, cid = setup
    r = api.get(f"/capsules/{cid}", headers=auth(owner))
    assert r.status_code == 200
    assert r.text == dumps_canonical(json.loads(r.text))
    assert r.json()["row_count"] == 200


def test_schema_sidecar_field(api, setup):
    owner, _, key, _ = setup
    r = upload(api, owner, key, csv=b"zip,n\n02139,1\n", policy="EMPTY", schema='{"zip": "string"}')
    info = api.get(f"/capsules/{r.json()['id']}", headers=auth(owner)).json()
    assert info["schema"] == [{"name": "zip", "type": "string"}, {"name": "n", "type": "int"}]


def test_job_flow(api, setup):
    owner, analyst, _, cid = setup
    r = api.post("/grants", headers=auth(owner), json={"analyst": "bob", "scope": [cid]})
    assert r.status_code == 201
    r = api.post("/jobs", headers=auth(analyst), json={"program": program("budgeting.src", cid), "seed": 3})
    assert r.status_code == 202
    jid = r.json()["job_id"]
    view = api.get(f"/jobs/{jid}", headers=auth(analyst), params={"wait": 5}).json()
    assert view["status"] == "Executed" and "noisy" in view["result"]
    owner_view = api.get(f"/jobs/{jid}", headers=auth(owner)).json()
    assert "program_source" not in owner_view and "result" not in owner_view
    assert api.post(f"/jobs/{jid}/notes", headers=auth(analyst), json={"text": "done"}).status_code == 200
    assert api.get(f"/jobs/{jid}", headers=auth(owner)).json()["notes"] == ["done"]


def test_pending_open_is_403_with_residual(api, setup):
    owner, analyst, _, cid = setup
    api.post("/grants", headers=auth(owner), json={"analyst": "bob", "scope": [cid]})
    r = api.get(f"/capsules/{cid}/open", headers=auth(analyst))
    assert r.status_code == 403
    body = r.json()
    assert body["code"] == "PolicyPending"
    assert body["detail"]["residual"] == "ALLOW PRIVACY AGGREGATE(10) AND PRIVACY DP(1, 0) AND REDACT merchant"
    assert b"m1" not in r.content


def test_owner_open(api, setup):
    owner, analyst, key, cid = setup
    r = api.post(f"/capsules/{cid}/owner-open", headers=auth(owner), json={"owner_key": key.hex()})
    assert r.status_code == 200 and r.content == TRANSACTIONS
    bad = api.post(f"/capsules/{cid}/owner-open", headers=auth(owner), json={"owner_key": generate_key().hex()})
    assert bad.status_code == 403 and bad.json()["code"] == "DecryptFailed"
    assert api.post(f"/capsules/{cid}/owner-open", headers=auth(owner), json={"owner_key": "zz"}).status_code == 403
    other = api.post(f"/capsules/{cid}/owner-open", headers=auth(analyst), json={"owner_key": key.hex()})
    assert other.status_code == 403 and other.json()["code"] == "NotOwner"


def test_grants_revoke_and_listing(api, setup):
    owner, analyst, _, cid = setup
    gid = api.post("/grants", headers=auth(owner), json={"analyst": "bob", "roles": ["doctor"]}).json()["grant_id"]
    listed = api.get("/grants", headers=auth(analyst)).json()["grants"]
    assert [g["id"] for g in listed] == [gid] and listed[0]["roles"] == ["doctor"]
    assert api.delete(f"/grants/{gid}", headers=auth(analyst)).status_code == 403
    assert api.delete(f"/grants/{gid}", headers=auth(owner)).json() == {"revoked": gid}
    assert api.delete(f"/grants/{gid}", headers=auth(owner)).status_code == 404
    r = api.post("/jobs", headers=auth(analyst), json={"program": program("raw_dump.src", cid)})
    assert r.status_code == 403 and r.json()["code"] == "NotAuthorized"


@pytest.mark.parametrize("header", [{}, {"Authorization": "Bearer nope"}, {"Authorization": "Basic abc"}])
def test_authentication_required(api, setup, header):
    _, _, _, cid = setup
    r = api.get(f"/capsules/{cid}", headers=header)
    assert r.status_code == 401 and r.json()["code"] == "UnknownPrincipal"


def test_malformed_requests(api, setup):
    owner, _, _, _ = setup
    r = api.post("/grants", headers=auth(owner), json={"roles": []})
    assert r.status_code == 422 and r.json()["code"] == "BadRequest"
    r = api.post("/grants", headers=auth(owner), content=b"{not json", params={})
    assert r.status_code == 422
    r = upload(api, owner, generate_key(), policy="ALLOW WHATEVER")
    assert r.status_code == 400 and r.json()["code"] == "SyntaxError"
    assert api.post("/principals", json={"name": "alice"}).status_code == 409
    assert api.get("/jobs/j-missing", headers=auth(owner)).status_code == 404
