from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsuleguard.errors import LimitError, ParseError, SemanticError, UnsupportedError
from capsuleguard.executor import execute
from capsuleguard.policy import Interval
from capsuleguard.program import (
    MAX_UNROLL,
    AggAll,
    Assign,
    BranchJoin,
    FilterRows,
    Output,
    ProgramIR,
    ReadCapsule,
    parse_program,
    validate,
)

from generators import random_program, random_tables

CORPUS = Path(__file__).parent / "corpus"


def test_agg_all_example_lowers_directly():
    ir = parse_program('df = read_capsule("c1")\nout = agg_all(df, "amount", "mean")\noutput(out)')
    assert ir.statements == (
        Assign("df", ReadCapsule("c1")),
        Assign("out", AggAll("df", "amount", "mean")),
        Output("out"),
    )


def test_while_is_unsupported():
    with pytest.raises(UnsupportedError):
        parse_program('df = read_capsule("c1")\nwhile True:\n    output(df)\n')


@pytest.mark.parametrize(
    "src",
    [
        'import os\ndf = read_capsule("c")\noutput(df)',
        'df = read_capsule("c")\nx = df.apply(f)\noutput(x)',
        'df = read_capsule("c")\nx = open(df)\noutput(x)',
        'df = read_capsule("c")\nif df > 1:\n    y = df\noutput(df)',
        'df = read_capsule("c")\nx = df[df["a"] != 3]\noutput(x)',
        'df = read_capsule("c")\ns = df["a"]\noutput(s)',
        'df = read_capsule("c")\nfor row in df:\n    output(df)',
    ],
)
def test_rejected_constructs(src):
    with pytest.raises(UnsupportedError):
        parse_program(src)


@pytest.mark.parametrize(
    "src",
    [
        'df = read_capsule("c"\noutput(df)',
        'df = = read_capsule("c")\noutput(df)',
        'df = read_capsule("c")\noutput(undefined)',
        'df = read_capsule("c")\nx = laplace(df, epsilon="a", sensitivity=1)\noutput(x)',
        'df = read_capsule("c")\nx = agg_all(df, "a")\noutput(x)',
    ],
)
def test_malformed_programs(src):
    with pytest.raises((ParseError, SemanticError)):
        parse_program(src)


def test_parse_error_has_position():
    with pytest.raises(ParseError) as info:
        parse_program('df = read_capsule("c")\nx = df[df["a"] >= ]\noutput(x)')
    detail = info.value.to_dict()["detail"]
    assert detail["line"] == 2 and detail["column"] > 1


def test_loop_limit():
    items = ", ".join(str(i) for i in range(MAX_UNROLL + 1))
    src = f'df = read_capsule("c")\nfor t in [{items}]:\n    x = df[df["a"] >= t]\n    output(x)\n'
    with pytest.raises(LimitError):
        parse_program(src)
    ok = ", ".join(str(i) for i in range(MAX_UNROLL))
    assert len(parse_program(src.replace(items, ok)).outputs()) == MAX_UNROLL


def test_mask_lowers_to_intervals():
    ir = parse_program('df = read_capsule("c")\nx = df[(df["a"] >= 18) & (df["a"] < 65) & (1 < df["b"])]\noutput(x)')
    filters = [s.expr for s in ir.statements if isinstance(s, Assign) and isinstance(s.expr, FilterRows)]
    assert {f.column: f.interval for f in filters} == {
        "a": Interval(18, 65, True, False),
        "b": Interval(1, float("inf"), False, False),
    }


def test_if_else_lowers_to_branch_join():
    ir = parse_program((CORPUS / "branch.src").read_text())
    joins = [s for s in ir.statements if isinstance(s, Assign) and isinstance(s.expr, BranchJoin)]
    assert len(joins) == 1 and ir.outputs() == (joins[0].var,)


def test_validate_reports_use_before_assign():
    ir = ProgramIR((Assign("b", AggAll("a", "x", "sum")), Assign("a", ReadCapsule("c")), Output("b")))
    diags = validate(ir)
    assert [(d.stmt, d.code) for d in diags] == [(0, "UseBeforeAssign")]


def test_validate_reports_duplicate_assign():
    ir = ProgramIR((Assign("df", ReadCapsule("c")), Assign("df", ReadCapsule("d")), Output("df")))
    assert [d.code for d in validate(ir)] == ["DuplicateAssign"]


def test_validate_requires_output():
    assert [d.code for d in validate(ProgramIR((Assign("df", ReadCapsule("c")),)))] == ["NoOutput"]


def test_budgeting_program_is_six_statements_and_valid():
    ir = parse_program((Path(__file__).parent / "fixtures" / "budgeting.src").read_text())
    assert len(ir.statements) == 6
    assert validate(ir) == []


@pytest.mark.parametrize("src", sorted(CORPUS.glob("*.src")), ids=lambda p: p.stem)
def test_corpus_golden(src):
    golden = src.with_suffix("").with_suffix(".ir.json").read_text().strip()
    ir = parse_program(src.read_text())
    assert ir.to_json() == golden
    assert validate(ir) == []
    assert ProgramIR.from_json(golden) == ir


def test_parse_is_deterministic():
    for src in CORPUS.glob("*.src"):
        text = src.read_text()
        assert parse_program(text) == parse_program(text)


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_ir_json_roundtrip(rng):
    ir = random_program(rng)
    assert ProgramIR.from_json(ir.to_json()) == ir
    assert validate(ir) == []


# -- loop unrolling ----------------------------------------------------------------

_BODIES = [
    ['part = df[df["a"] >= {v}]', 'n = agg_all(part, "a", "count")', "output(n)"],
    ['part = df[(df["a"] < {v}) & (df["a"] > -30)]', 'n = agg_all(part, "f", "sum")', "output(n)"],
    ['df = df[{v} <= df["a"]]'],
    ['part = df[df["a"] <= {v}]', 'g = part.groupby("g").agg({{"a": "sum"}})', "output(g)"],
]


def _loop_program(rng: random.Random) -> tuple[str, str]:
    body = rng.choice(_BODIES)
    values = [rng.choice([-20, 0, 10, 25, 50, 100]) for _ in range(rng.randint(1, 6))]
    head = 'df = read_capsule("c1")\n'
    tail = 'total = agg_all(df, "a", "count")\noutput(total)\n'
    looped = head + f"for v in [{', '.join(map(str, values))}]:\n"
    looped += "".join(f"    {line.replace('{v}', 'v').replace('{{', '{').replace('}}', '}')}\n" for line in body)
    manual = head + "".join(f"{line.format(v=v)}\n" for v in values for line in body)
    return looped + tail, manual + tail


def test_unrolled_loops_match_manual_unrolling():
    rng = random.Random(17)
    for _ in range(50):
        looped, manual = _loop_program(rng)
        a, b = parse_program(looped), parse_program(manual)
        assert validate(a) == []
        tables = random_tables(rng)
        ra = execute(a, tables, seed=3)
        rb = execute(b, tables, seed=3)
        assert [ra.outputs[v] for v in a.outputs()] == [rb.outputs[v] for v in b.outputs()]
