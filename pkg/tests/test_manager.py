from __future__ import annotations

import json
import threading

import pytest

from capsuleguard.analyzer import analyze, residual_for
from capsuleguard.errors import (
    CsvMalformed,
    DecryptFailed,
    DuplicateCapsule,
    DuplicatePrincipal,
    NotAuthorized,
    NotFound,
    NotOwner,
    ParseError,
    PolicyPending,
    UnknownPrincipal,
)
from capsuleguard.executor import read_csv
from capsuleguard.manager.crypto import generate_key
from capsuleguard.manager.service import DataManager, capsule_id_for
from capsuleguard.policy import combine, parse_policy, print_policy
from capsuleguard.program import parse_program

from conftest import BUDGET_POLICY, TRANSACTIONS, program

PEOPLE = b"age,name\n30,ann\n17,bob\n"


def test_create_capsule_metadata(world):
    info = world.dm.capsule_info(world.owner, world.capsule)
    assert info["row_count"] == 200
    assert [c["name"] for c in info["schema"]] == ["date", "merchant", "category", "amount"]
    assert info["policy"] == print_policy(parse_policy(BUDGET_POLICY))
    assert info["lineage"] == [] and not info["derived"]
    assert "ciphertext" not in json.dumps(info).replace("ciphertext_ref", "")


def test_payload_is_encrypted_at_rest(world, tmp_path):
    blobs = b"".join(p.read_bytes() for p in (tmp_path / "store").rglob("*") if p.is_file())
    assert b"merchant" in blobs  # schema metadata is plaintext
    assert b"m17" not in blobs and b"2024-" not in blobs


def test_capsule_id_is_content_derived(tmp_path):
    ids = []
    key, nonce = generate_key(), b"\x01" * 12
    for i in range(2):
        dm = DataManager(str(tmp_path / f"s{i}"), sync=True)
        dm.register_principal("alice")
        ids.append(dm.create_capsule("alice", TRANSACTIONS, BUDGET_POLICY, key, nonce=nonce))
        with pytest.raises(DuplicateCapsule):
            dm.create_capsule("alice", TRANSACTIONS, BUDGET_POLICY, key, nonce=nonce)
    assert ids[0] == ids[1] and len(ids[0]) == 64
    assert capsule_id_for(b"x", "EMPTY", ()) != capsule_id_for(b"x", "EMPTY", (("p", "h"),))


def test_create_rejects_bad_inputs(world):
    with pytest.raises(ParseError):
        world.dm.create_capsule(world.owner, PEOPLE, "ALLOW NOTHING", world.key)
    with pytest.raises(CsvMalformed):
        world.dm.create_capsule(world.owner, b"a,b\n1\n", "EMPTY", world.key)
    with pytest.raises(UnknownPrincipal):
        world.dm.create_capsule("nobody", PEOPLE, "EMPTY", world.key)


def test_owner_roundtrip_and_wrong_key(world):
    assert world.dm.owner_open(world.owner, world.capsule, world.key) == TRANSACTIONS
    with pytest.raises(DecryptFailed):
        world.dm.owner_open(world.owner, world.capsule, generate_key())
    with pytest.raises(NotOwner):
        world.dm.owner_open(world.analyst, world.capsule, world.key)


def test_empty_policy_capsule_opens_for_granted_analyst(world):
    cid = world.dm.create_capsule(world.owner, PEOPLE, "EMPTY", world.key)
    with pytest.raises(NotAuthorized):
        world.dm.open_capsule(world.analyst, cid)
    world.dm.grant(world.owner, world.analyst, scope=[cid])
    assert world.dm.open_capsule(world.analyst, cid) == PEOPLE


def test_pending_aggregate_reports_residual(world):
    cid = world.dm.create_capsule(world.owner, PEOPLE, "ALLOW PRIVACY AGGREGATE(10)", world.key)
    world.dm.grant(world.owner, world.analyst, scope=[cid])
    with pytest.raises(PolicyPending) as info:
        world.dm.open_capsule(world.analyst, cid)
    assert info.value.residual == "ALLOW PRIVACY AGGREGATE(10)"
    assert info.value.to_dict()["detail"]["residual"] == "ALLOW PRIVACY AGGREGATE(10)"


def test_role_gated_capsule(world):
    cid = world.dm.create_capsule(world.owner, PEOPLE, "ALLOW ROLE doctor", world.key)
    world.dm.grant(world.owner, world.analyst, roles=["doctor"], scope=[cid])
    world.dm.grant(world.owner, world.stranger, roles=["nurse"], scope=[cid])
    assert world.dm.open_capsule(world.analyst, cid) == PEOPLE
    with pytest.raises(PolicyPending):
        world.dm.open_capsule(world.stranger, cid)


def test_purpose_gated_capsule(world):
    cid = world.dm.create_capsule(world.owner, PEOPLE, "ALLOW PURPOSE research", world.key)
    world.dm.grant(world.owner, world.analyst, purposes=["research"], scope=[cid])
    assert world.dm.open_capsule(world.analyst, cid, "research") == PEOPLE
    with pytest.raises(NotAuthorized):
        world.dm.open_capsule(world.analyst, cid, "billing")
    with pytest.raises(PolicyPending):
        world.dm.open_capsule(world.analyst, cid)


def test_grant_requires_ownership(world):
    with pytest.raises(NotOwner):
        world.dm.grant(world.stranger, world.analyst, scope=[world.capsule])
    with pytest.raises(UnknownPrincipal):
        world.dm.grant(world.owner, "ghost")
    with pytest.raises(DuplicatePrincipal):
        world.dm.register_principal("alice")


def test_jobs_need_grants_and_revocation_sticks(world):
    src = program("budgeting.src", world.capsule)
    with pytest.raises(NotAuthorized):
        world.dm.submit_job(world.analyst, src)
    gid = world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    assert world.dm.job_status(world.analyst, world.dm.submit_job(world.analyst, src))["status"] == "Executed"
    with pytest.raises(NotOwner):
        world.dm.revoke(world.stranger, gid)
    world.dm.revoke(world.owner, gid)
    with pytest.raises(NotAuthorized):
        world.dm.submit_job(world.analyst, src)
    with pytest.raises(NotFound):
        world.dm.revoke(world.owner, gid)


def test_compliant_job_returns_plaintext(world):
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    jid = world.dm.submit_job(world.analyst, program("budgeting.src", world.capsule), seed=1)
    status = world.dm.job_status(world.analyst, jid)
    assert status["status"] == "Executed"
    table = read_csv(status["result"]["noisy"])
    assert table.columns == ("category", "amount")
    assert sorted(table.column("category")) == ["food", "fun", "rent", "travel"]
    assert status["residuals"] == [{"output": "noisy", "residual": "EMPTY", "capsule_id": None}]


def test_noncompliant_job_derives_capsule(world):
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    jid = world.dm.submit_job(world.analyst, program("raw_dump.src", world.capsule))
    status = world.dm.job_status(world.analyst, jid)
    assert status["status"] == "Analyzed" and "result" not in status
    (out,) = status["residuals"]
    assert out["residual"] == print_policy(parse_policy(BUDGET_POLICY))
    derived = world.dm.capsule_info(world.analyst, out["capsule_id"])
    assert derived["derived"] and derived["lineage"][0]["parent"] == world.capsule
    with pytest.raises(PolicyPending) as info:
        world.dm.open_capsule(world.analyst, out["capsule_id"])
    assert info.value.residual == out["residual"]


def test_derived_policy_is_residual_of_combined_parents(world):
    dm = world.dm
    other = dm.create_capsule(world.owner, b"merchant,limit\nm1,5\nm2,7\n", "ALLOW REDACT limit", world.key)
    dm.grant(world.owner, world.analyst, scope=[world.capsule, other])
    src = (
        f'a = read_capsule("{world.capsule}")\nb = read_capsule("{other}")\n'
        'j = join(a, b, on=["merchant"])\nj = j.drop(columns=["limit"])\noutput(j)'
    )
    status = dm.job_status(world.analyst, dm.submit_job(world.analyst, src))
    (out,) = status["residuals"]
    metas = {c: (dm._capsules[c].policy, [n for n, _ in dm._capsules[c].schema], 2) for c in (world.capsule, other)}
    res = analyze(parse_program(src), metas)
    parents = combine(dm._capsules[world.capsule].policy, dm._capsules[other].policy)
    assert out["residual"] == print_policy(residual_for(parents, res.discharged["j.1"]))
    assert out["residual"] == print_policy(res.per_output["j.1"])


def test_lineage_is_reproducible(world):
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    src = program("raw_dump.src", world.capsule)
    lineages = []
    for _ in range(2):
        status = world.dm.job_status(world.analyst, world.dm.submit_job(world.analyst, src))
        info = world.dm.capsule_info(world.analyst, status["residuals"][0]["capsule_id"])
        lineages.append(info["lineage"])
    assert lineages[0] == lineages[1]
    assert lineages[0][0]["parent"] == world.capsule


def test_parse_failures_are_reported(world):
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    jid = world.dm.submit_job(world.analyst, f'df = read_capsule("{world.capsule}")\nwhile x:\n', inputs=[world.capsule])
    status = world.dm.job_status(world.analyst, jid)
    assert status["status"] == "Rejected" and status["error"]["code"] == "ParseFailed"
    assert status["diagnostics"][0]["line"] == 2


def test_undeclared_inputs_are_rejected(world):
    other = world.dm.create_capsule(world.owner, PEOPLE, "EMPTY", world.key)
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    src = f'a = read_capsule("{other}")\noutput(a)'
    status = world.dm.job_status(world.analyst, world.dm.submit_job(world.analyst, src, inputs=[world.capsule]))
    assert status["status"] == "Rejected" and status["error"]["code"] == "NotAuthorized"


def test_owner_view_hides_program(world):
    world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    jid = world.dm.submit_job(world.analyst, program("budgeting.src", world.capsule))
    world.dm.add_note(world.analyst, jid, "mean spend per category")
    view = world.dm.job_status(world.owner, jid)
    assert view["notes"] == ["mean spend per category"]
    assert "program_source" not in view and "result" not in view
    with pytest.raises(NotAuthorized):
        world.dm.job_status(world.stranger, jid)
    with pytest.raises(NotAuthorized):
        world.dm.add_note(world.owner, jid, "forged")


def test_state_survives_restart(world, tmp_path):
    gid = world.dm.grant(world.owner, world.analyst, scope=[world.capsule])
    jid = world.dm.submit_job(world.analyst, program("budgeting.src", world.capsule))
    revoked = world.dm.grant(world.owner, world.stranger, scope=[world.capsule])
    world.dm.revoke(world.owner, revoked)
    world.dm.close()
    dm = DataManager(str(tmp_path / "store"), sync=True)
    assert dm.authenticate(world.tokens["bob"]) == "bob"
    assert dm.job_status("bob", jid)["status"] == "Executed"
    assert [g["id"] for g in dm.grants_for("alice")] == [gid]
    assert dm.owner_open("alice", world.capsule, world.key) == TRANSACTIONS
    with pytest.raises(NotAuthorized):
        dm.submit_job("mallory", program("budgeting.src", world.capsule))


def test_threaded_jobs(tmp_path):
    dm = DataManager(str(tmp_path / "store"), sync=False, max_workers=4)
    try:
        dm.register_principal("alice")
        dm.register_principal("bob")
        key = generate_key()
        cid = dm.create_capsule("alice", TRANSACTIONS, BUDGET_POLICY, key)
        dm.grant("alice", "bob", scope=[cid])
        jids = []
        lock = threading.Lock()

        def submit(name: str) -> None:
            jid = dm.submit_job("bob", program(name, cid))
            with lock:
                jids.append(jid)

        threads = [threading.Thread(target=submit, args=(n,)) for n in ["budgeting.src", "raw_dump.src"] * 4]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for jid in jids:
            assert dm.wait(jid, 30)
        statuses = sorted(dm.job_status("bob", j)["status"] for j in jids)
        assert statuses == ["Analyzed"] * 4 + ["Executed"] * 4
    finally:
        dm.close()


def test_authentication(world):
    assert world.dm.authenticate(world.tokens["alice"]) == "alice"
    for bad in (None, "", "0" * 64):
        with pytest.raises(UnknownPrincipal):
            world.dm.authenticate(bad)
