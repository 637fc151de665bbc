from __future__ import annotations

import random

import pytest
from hypothesis import given, settings

from capsuleguard.analyzer import residual_for
from capsuleguard.errors import ParseError, SemanticError
from capsuleguard.policy import (
    DP,
    INF,
    SATISFIED,
    UNSATISFIABLE,
    Aggregate,
    Filter,
    Interval,
    Policy,
    Purpose,
    Redact,
    Role,
    Schema,
    combine,
    implies,
    is_satisfied,
    normalize,
    parse_policy,
    print_policy,
)

from generators import policies, random_policy, small_policies, small_policy_with_budget
from oracles import oracle_conjunction_matches, oracle_equivalent, oracle_implies, oracle_residual_matches

AGE18 = Filter("age", Interval.at_least(18))


def P(*clauses) -> Policy:
    return Policy(tuple(frozenset(c) for c in clauses))


# -- grammar ---------------------------------------------------------------------


def test_parse_single_aggregate():
    assert parse_policy("ALLOW PRIVACY AGGREGATE(100)") == P({Aggregate(100)})


def test_parse_empty_is_satisfied():
    p = parse_policy("EMPTY")
    assert p == SATISFIED
    assert p.clauses == (frozenset(),)


def test_parse_two_clauses():
    p = parse_policy("ALLOW FILTER age IN [18, inf) AND REDACT name OR ALLOW PRIVACY DP(1.0, 1e-6)")
    assert set(p.clauses) == {frozenset({AGE18, Redact("name")}), frozenset({DP(1.0, 1e-6)})}


def test_parse_every_kind():
    text = (
        "ALLOW SCHEMA(a, b) AND FILTER x IN (0, 5] AND REDACT a AND ROLE doctor "
        "AND PURPOSE research AND PRIVACY AGGREGATE(3) AND PRIVACY DP(0.5, 0)"
    )
    (clause,) = parse_policy(text).clauses
    assert clause == {
        Schema(frozenset({"a", "b"})),
        Filter("x", Interval(0, 5, False, True)),
        Redact("a"),
        Role("doctor"),
        Purpose("research"),
        Aggregate(3),
        DP(0.5, 0.0),
    }


def test_print_examples():
    assert print_policy(SATISFIED) == "EMPTY"
    assert print_policy(P({Aggregate(100)})) == "ALLOW PRIVACY AGGREGATE(100)"
    assert print_policy(UNSATISFIABLE) == "UNSATISFIABLE"


@pytest.mark.parametrize(
    "text",
    [
        "",
        "ALLOW",
        "ALLOW PRIVACY AGGREGATE(",
        "ALLOW FILTER age IN [18, 30]x",
        "ALLOW REDACT name OR",
        "ALLOW ROLE",
        "ALLOW PRIVACY DP(1.0, 1e-6",
        "allow PRIVACY AGGREGATE(1)",
        "ALLOW REDACT name $",
    ],
)
def test_malformed_policies_raise_parse_error(text):
    with pytest.raises(ParseError) as info:
        parse_policy(text)
    assert info.value.to_dict()["code"] == "SyntaxError"


@pytest.mark.parametrize(
    "text", ["ALLOW PRIVACY AGGREGATE(0)", "ALLOW PRIVACY DP(0, 0)", "ALLOW PRIVACY DP(1, 2)"]
)
def test_out_of_range_parameters_raise(text):
    with pytest.raises((ParseError, SemanticError)):
        parse_policy(text)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        parse_policy("ALLOW REDACT name AND\n  ROLE")
    d = info.value.to_dict()["detail"]
    assert d["line"] == 2


@settings(max_examples=300, deadline=None)
@given(policies())
def test_roundtrip_is_normalization(p):
    assert parse_policy(print_policy(p)) == normalize(p)


@settings(max_examples=300, deadline=None)
@given(policies())
def test_normalize_idempotent(p):
    assert normalize(normalize(p)) == normalize(p)


# -- normal form -----------------------------------------------------------------


def test_filters_on_one_column_intersect():
    p = normalize(P({AGE18, Filter("age", Interval.at_least(21))}))
    assert p == P({Filter("age", Interval.at_least(21))})


def test_subsumed_clause_removed():
    a, b = Redact("x"), Role("r")
    assert normalize(P({a}, {a, b})) == P({a})


def test_contradictory_filter_drops_clause():
    p = P({Filter("x", Interval.closed(0, 5)), Filter("x", Interval.closed(10, 20))})
    assert normalize(p) == UNSATISFIABLE
    assert not is_satisfied(normalize(p))


def test_stronger_aggregate_subsumes_weaker_clause():
    assert normalize(P({Aggregate(100)}, {Aggregate(200), Redact("x")})) == P({Aggregate(100)})


# -- lattice ---------------------------------------------------------------------


def test_combine_identity_example():
    p = P({Aggregate(100)}, {Redact("a")})
    assert combine(SATISFIED, p) == normalize(p)


def test_combine_cross_product_example():
    assert combine(P({Aggregate(100)}), P({DP(1, 1e-6)})) == P({Aggregate(100), DP(1, 1e-6)})


def _clause(rng: random.Random) -> frozenset:
    while True:
        p = small_policy_with_budget(rng, 3)
        if p.clauses and p.clauses[0]:
            return p.clauses[0]


def test_combine_two_by_three_matches_conjunction():
    rng = random.Random(11)
    for _ in range(30):
        a = Policy((_clause(rng), _clause(rng)))
        b = Policy((_clause(rng), _clause(rng), _clause(rng)))
        c = combine(a, b)
        assert len(c.clauses) <= 6
        assert oracle_conjunction_matches(a, b, c)


def test_implies_examples():
    assert implies(P({Aggregate(200)}), P({Aggregate(100)}))
    assert not implies(P({Aggregate(100)}), P({Aggregate(200)}))
    rng = random.Random(5)
    for _ in range(50):
        assert implies(random_policy(rng), SATISFIED)
        assert implies(UNSATISFIABLE, random_policy(rng))


def test_is_satisfied_examples():
    assert is_satisfied(SATISFIED)
    assert not is_satisfied(P({Aggregate(100)}))
    assert is_satisfied(P({Redact("a")}, set()))


@settings(max_examples=150, deadline=None)
@given(small_policies(), small_policies(), small_policies())
def test_combine_laws(a, b, c):
    assert combine(a, b) == combine(b, a)
    assert combine(combine(a, b), c) == combine(a, combine(b, c))
    assert combine(a, SATISFIED) == normalize(a)


@settings(max_examples=150, deadline=None)
@given(small_policies(), small_policies(), small_policies())
def test_implies_preorder(a, b, c):
    assert implies(a, a)
    if implies(a, b) and implies(b, c):
        assert implies(a, c)
    if implies(a, b) and implies(b, a):
        assert print_policy(normalize(a)) == print_policy(normalize(b))


@settings(max_examples=150, deadline=None)
@given(policies(), policies())
def test_combine_implies_each_side(a, b):
    c = combine(a, b)
    assert implies(c, a) and implies(c, b)


@settings(max_examples=200, deadline=None)
@given(small_policies(), small_policies())
def test_implies_matches_world_oracle(a, b):
    assert implies(a, b) == oracle_implies(a, b)


@settings(max_examples=100, deadline=None)
@given(small_policies())
def test_normalize_preserves_meaning(p):
    assert oracle_equivalent(p, normalize(p))


@settings(max_examples=100, deadline=None)
@given(small_policies(), small_policies())
def test_combine_is_conjunction(a, b):
    assert oracle_conjunction_matches(a, b, combine(a, b))


# -- residuals -------------------------------------------------------------------


def test_residual_examples():
    p = P({Aggregate(100), Redact("name")})
    assert residual_for(p, {Aggregate(100)}) == P({Redact("name")})
    assert residual_for(p, set()) == p
    assert residual_for(p, {Aggregate(100), Redact("name")}) == SATISFIED


def test_residual_exhaustive_against_oracle():
    rng = random.Random(23)
    checked = 0
    while checked < 40:
        p = small_policy_with_budget(rng, 6)
        reqs = sorted(p.requirements(), key=lambda r: r.render())
        for mask in range(1 << len(reqs)):
            done = frozenset(r for i, r in enumerate(reqs) if mask >> i & 1)
            assert oracle_residual_matches(p, done, residual_for(p, done))
        checked += 1


def test_numbers_print_shortest():
    p = P({Filter("x", Interval(-INF, 0.1, False, True)), DP(1 / 3, 1e-6)})
    text = print_policy(p)
    assert "0.1]" in text and "1e-6" in text
    assert parse_policy(text) == p
