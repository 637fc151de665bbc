"""Concrete policy grammar.

::

    policy  := "EMPTY" | "UNSATISFIABLE" | clause ("OR" clause)*
    clause  := "ALLOW" req ("AND" req)*
    req     := "SCHEMA" "(" ident ("," ident)* ")"
             | "FILTER" ident "IN" ("[" | "(") bound "," bound ("]" | ")")
             | "REDACT" ident | "ROLE" ident | "PURPOSE" ident
             | "PRIVACY" "AGGREGATE" "(" int ")"
             | "PRIVACY" "DP" "(" number "," number ")"
    bound   := number | "inf" | "-inf"

Keywords are case-sensitive and reserved; whitespace between tokens is
insignificant.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseError, SemanticError
from .lattice import normalize
from .model import (
    DP,
    INF,
    Aggregate,
    Filter,
    Interval,
    Policy,
    Purpose,
    Redact,
    Requirement,
    Role,
    Schema,
    render_clause,
)

KEYWORDS = frozenset(
    {
        "EMPTY",
        "UNSATISFIABLE",
        "ALLOW",
        "OR",
        "AND",
        "SCHEMA",
        "FILTER",
        "IN",
        "REDACT",
        "ROLE",
        "PURPOSE",
        "PRIVACY",
        "AGGREGATE",
        "DP",
    }
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<neginf>-inf\b)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[()\[\],])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "word" | "number" | "punct" | "eof"
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            for i, ch in enumerate(chunk):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        else:
            if kind == "neginf":
                kind = "number"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected: tuple[str, ...]) -> ParseError:
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        return ParseError(f"unexpected {found}", t.line, t.column, expected)

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("word", "punct") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.tok
        if not self.accept(text):
            raise self.fail((repr(text),))
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "word" or t.text in KEYWORDS:
            raise self.fail(("identifier",))
        self.i += 1
        return t.text

    def number(self, *, allow_inf: bool = False) -> float:
        t = self.tok
        if t.kind == "number" and (allow_inf or t.text != "-inf"):
            self.i += 1
            return -INF if t.text == "-inf" else float(t.text)
        if allow_inf and t.kind == "word" and t.text == "inf":
            self.i += 1
            return INF
        raise self.fail(("number", "inf", "-inf") if allow_inf else ("number",))

    def integer(self) -> int:
        t = self.tok
        if t.kind == "number" and re.fullmatch(r"\d+", t.text):
            self.i += 1
            return int(t.text)
        raise self.fail(("integer",))

    # -- grammar -------------------------------------------------------------

    def policy(self) -> Policy:
        if self.accept("EMPTY"):
            clauses: list[frozenset] = [frozenset()]
        elif self.accept("UNSATISFIABLE"):
            clauses = []
        else:
            clauses = [self.clause()]
            while self.accept("OR"):
                clauses.append(self.clause())
        if self.tok.kind != "eof":
            raise self.fail(("'OR'", "end of input") if clauses and clauses[0] else ("end of input",))
        return Policy(tuple(clauses))

    def clause(self) -> frozenset:
        if not self.accept("ALLOW"):
            raise self.fail(("'ALLOW'", "'EMPTY'", "'UNSATISFIABLE'"))
        reqs = [self.requirement()]
        while self.accept("AND"):
            reqs.append(self.requirement())
        return frozenset(reqs)

    def requirement(self) -> Requirement:
        start = self.tok
        try:
            return self._requirement()
        except SemanticError as exc:
            raise SemanticError(
                f"{start.line}:{start.column}: {exc.message}",
                {"line": start.line, "column": start.column},
            ) from None

    def _requirement(self) -> Requirement:
        if self.accept("SCHEMA"):
            self.expect("(")
            cols = [self.ident()]
            while self.accept(","):
                cols.append(self.ident())
            self.expect(")")
            return Schema(frozenset(cols))
        if self.accept("FILTER"):
            col = self.ident()
            self.expect("IN")
            if self.accept("["):
                lc = True
            elif self.accept("("):
                lc = False
            else:
                raise self.fail(("'['", "'('"))
            lo = self.number(allow_inf=True)
            self.expect(",")
            hi = self.number(allow_inf=True)
            if self.accept("]"):
                hc = True
            elif self.accept(")"):
                hc = False
            else:
                raise self.fail(("']'", "')'"))
            return Filter(col, Interval(lo, hi, lc, hc))
        if self.accept("REDACT"):
            return Redact(self.ident())
        if self.accept("ROLE"):
            return Role(self.ident())
        if self.accept("PURPOSE"):
            return Purpose(self.ident())
        if self.accept("PRIVACY"):
            if self.accept("AGGREGATE"):
                self.expect("(")
                k = self.integer()
                self.expect(")")
                return Aggregate(k)
            if self.accept("DP"):
                self.expect("(")
                eps = self.number()
                self.expect(",")
                delta = self.number()
                self.expect(")")
                return DP(eps, delta)
            raise self.fail(("'AGGREGATE'", "'DP'"))
        raise self.fail(
            ("'SCHEMA'", "'FILTER'", "'REDACT'", "'ROLE'", "'PURPOSE'", "'PRIVACY'")
        )


def parse_policy(text: str) -> Policy:
    """Parse and normalize policy text.

    Raises :class:`~capsuleguard.errors.ParseError` on malformed input and
    :class:`~capsuleguard.errors.SemanticError` when a requirement violates
    its invariants (e.g. ``DP(0, 0)``).
    """
    return normalize(_Parser(text).policy())


def parse_requirement(text: str) -> Requirement:
    p = _Parser(text)
    r = p.requirement()
    if p.tok.kind != "eof":
        raise p.fail(("end of input",))
    return r


def print_policy(p: Policy) -> str:
    """Grammar-conformant text of ``normalize(p)``."""
    p = normalize(p)
    if not p.clauses:
        return "UNSATISFIABLE"
    return " OR ".join(render_clause(c) for c in p.clauses)
