from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

from capsuleguard.manager.crypto import generate_key
from capsuleguard.manager.service import DataManager

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
sys.path.insert(0, str(TESTS))

BUDGET_POLICY = (FIXTURES / "budget.policy").read_text().strip()
TRANSACTIONS = (FIXTURES / "transactions.csv").read_bytes()


def program(name: str, capsule_id: str) -> str:
    """A fixture program with its placeholder capsule id filled in."""
    return (FIXTURES / name).read_text().replace('"tx"', f'"{capsule_id}"')


@dataclass
class World:
    dm: DataManager
    owner: str
    analyst: str
    stranger: str
    key: bytes
    capsule: str
    tokens: dict[str, str]


@pytest.fixture
def world(tmp_path) -> World:
    dm = DataManager(str(tmp_path / "store"), sync=True)
    tokens = {n: dm.register_principal(n) for n in ("alice", "bob", "mallory")}
    key = generate_key()
    cid = dm.create_capsule("alice", TRANSACTIONS, BUDGET_POLICY, key)
    yield World(dm, "alice", "bob", "mallory", key, cid, tokens)
    dm.close()


def pytest_terminal_summary(terminalreporter) -> None:
    """Repeat the acceptance report lines, which pytest captures, after the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) == "call" and "test_acceptance" in rep.nodeid:
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith(("PASS ", "FAIL "))]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: s.split(":")[0].split()[-1]):
            terminalreporter.write_line(ln)
