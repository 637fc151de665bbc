"""Recursive-descent parser for the analyst surface language.

The surface language is a line-oriented subset of dataframe-style Python.
Programs are lowered directly to :class:`ProgramIR` while parsing:

* rebinding a name creates a fresh SSA version (``df``, ``df.1``, ...);
* ``for x in [lit, ...]:`` loops are unrolled by re-parsing the body once per
  literal, with ``x`` bound to that literal;
* ``if cond: ... else: ...`` lowers both branches in sequence and then one
  :class:`BranchJoin` per variable assigned in the branches;
* a name bound to a literal (``k = 10``) is a compile-time constant.

See ``docs/surface-language.md`` for the full grammar.
"""

from __future__ import annotations

import ast
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from ..errors import LimitError, ParseError, SemanticError, UnsupportedError
from ..policy.model import INF, Interval
from .ir import (
    AggAll,
    Assign,
    BranchJoin,
    Cond,
    DropColumns,
    Expr,
    FilterGroupsMinSize,
    FilterRows,
    GroupAgg,
    HashColumn,
    Join,
    Laplace,
    Operand,
    Output,
    ProgramIR,
    Project,
    ReadCapsule,
    Statement,
    StubCall,
)
from .validate import validate

MAX_UNROLL = 64
MAX_STATEMENTS = 4096

BUILTINS = frozenset(
    {"read_capsule", "filter_groups", "agg_all", "laplace", "hash_column", "join", "output"}
)
_UNSUPPORTED_KEYWORDS = frozenset(
    {
        "while",
        "def",
        "class",
        "return",
        "import",
        "from",
        "lambda",
        "with",
        "try",
        "except",
        "finally",
        "break",
        "continue",
        "elif",
        "global",
        "nonlocal",
        "del",
        "pass",
        "assert",
        "yield",
        "raise",
        "async",
        "await",
    }
)
_RESERVED = _UNSUPPORTED_KEYWORDS | {"for", "in", "if", "else", "True", "False", "None", "and", "or", "not"}

_TOKEN_RE = re.compile(
    r"""
    (?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|[=<>()\[\]{},:.&\-])
    """,
    re.VERBOSE,
)

_CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")


@dataclass(frozen=True)
class Tok:
    kind: str  # name number string op newline indent dedent eof
    text: str
    line: int
    column: int
    value: Any = None

    def describe(self) -> str:
        if self.kind in ("newline", "indent", "dedent", "eof"):
            return {"newline": "end of line", "indent": "indent", "dedent": "dedent", "eof": "end of input"}[
                self.kind
            ]
        return repr(self.text)


def tokenize(source: str) -> list[Tok]:
    toks: list[Tok] = []
    indents = [0]
    depth = 0
    lines = source.split("\n")
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        pos = 0
        if depth == 0:
            stripped = line.lstrip(" ")
            if stripped.startswith("\t"):
                raise ParseError("tabs are not allowed in indentation", lineno, 1, ("spaces",))
            if not stripped or stripped.startswith("#"):
                continue
            width = len(line) - len(stripped)
            if width > indents[-1]:
                indents.append(width)
                toks.append(Tok("indent", "", lineno, 1))
            else:
                while width < indents[-1]:
                    indents.pop()
                    toks.append(Tok("dedent", "", lineno, 1))
                if width != indents[-1]:
                    raise ParseError("inconsistent dedent", lineno, width + 1, ("matching indentation",))
            pos = width
        while pos < len(line):
            ch = line[pos]
            if ch in " \t":
                pos += 1
                continue
            if ch == "#":
                break
            m = _TOKEN_RE.match(line, pos)
            if m is None:
                raise ParseError(f"unexpected character {ch!r}", lineno, pos + 1)
            kind = m.lastgroup
            text = m.group()
            value: Any = None
            if kind == "number":
                value = float(text) if re.search(r"[.eE]", text) else int(text)
            elif kind == "string":
                try:
                    value = ast.literal_eval(text)
                except (ValueError, SyntaxError):
                    raise ParseError("malformed string literal", lineno, pos + 1) from None
            elif kind == "op" and text in "([{":
                depth += 1
            elif kind == "op" and text in ")]}":
                depth = max(0, depth - 1)
            toks.append(Tok(kind, text, lineno, pos + 1, value))
            pos = m.end()
        if depth == 0 and toks and toks[-1].kind not in ("newline", "indent", "dedent"):
            toks.append(Tok("newline", "", lineno, len(line) + 1))
    if depth:
        raise ParseError("unclosed bracket", lineno, 1, ("')'", "']'", "'}'"))
    end = len(lines)
    while len(indents) > 1:
        indents.pop()
        toks.append(Tok("dedent", "", end, 1))
    toks.append(Tok("eof", "", end + 1, 1))
    return toks


# -- argument binding -----------------------------------------------------------


@dataclass
class _Arg:
    tok: Tok
    kind: str  # name str num list dict
    value: Any


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # var str num int strs capsule literal
    default: Any = None
    required: bool = True


_SIGNATURES: dict[str, tuple[Param, ...]] = {
    "read_capsule": (Param("capsule_id", "capsule"),),
    "filter_groups": (Param("src", "var"), Param("min_size", "int")),
    "agg_all": (Param("src", "var"), Param("column", "str"), Param("func", "str")),
    "laplace": (
        Param("src", "var"),
        Param("epsilon", "num"),
        Param("sensitivity", "num"),
        Param("delta", "num", 0.0, False),
    ),
    "hash_column": (Param("src", "var"), Param("column", "str")),
    "join": (Param("left", "var"), Param("right", "var"), Param("on", "strs")),
}


class _Lowerer:
    def __init__(self, source: str, stub_signatures: Mapping[str, Sequence[str]]) -> None:
        self.toks = tokenize(source)
        self.i = 0
        self.stubs = dict(stub_signatures)
        self.out: list[Statement] = []
        self.env: dict[str, str] = {}  # surface name -> current SSA name
        self.consts: dict[str, Any] = {}  # loop variables and literal bindings
        self.versions: dict[str, int] = {}
        self.assigned_stack: list[set[str]] = []
        self.branch_depth = 0

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, n: int = 1) -> Tok:
        return self.toks[min(self.i + n, len(self.toks) - 1)]

    def fail(self, *expected: str) -> ParseError:
        t = self.tok
        return ParseError(f"unexpected {t.describe()}", t.line, t.column, expected)

    def unsupported(self, msg: str, t: Tok | None = None) -> UnsupportedError:
        t = t or self.tok
        return UnsupportedError(msg, t.line, t.column)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        t = self.tok
        if not self.accept(text):
            raise self.fail(repr(text))
        return t

    def expect_kind(self, kind: str, what: str) -> Tok:
        t = self.tok
        if t.kind != kind:
            raise self.fail(what)
        self.i += 1
        return t

    def end_of_statement(self) -> None:
        if self.tok.kind == "newline":
            self.i += 1
        elif self.tok.kind not in ("eof", "dedent"):
            raise self.fail("end of line")

    # -- SSA -----------------------------------------------------------------

    def fresh(self, name: str) -> str:
        n = self.versions.get(name, 0)
        self.versions[name] = n + 1
        return name if n == 0 else f"{name}.{n}"

    def emit(self, var: str, expr: Expr) -> str:
        if len(self.out) >= MAX_STATEMENTS:
            raise LimitError(f"program lowers to more than {MAX_STATEMENTS} statements")
        self.out.append(Assign(var, expr))
        return var

    def bind(self, name: str, ssa: str) -> None:
        self.consts.pop(name, None)
        self.env[name] = ssa
        for s in self.assigned_stack:
            s.add(name)

    def lookup_var(self, t: Tok) -> str:
        if t.text in self.env:
            return self.env[t.text]
        if t.text in self.consts:
            raise self.unsupported(f"{t.text!r} is a literal, not a dataframe", t)
        raise ParseError(f"unknown name {t.text!r}", t.line, t.column, ("assigned variable",))

    # -- statements ----------------------------------------------------------

    def program(self) -> ProgramIR:
        while self.tok.kind != "eof":
            if self.tok.kind == "newline":
                self.i += 1
                continue
            if self.tok.kind == "indent":
                raise ParseError("unexpected indent", self.tok.line, self.tok.column, ("statement",))
            self.statement()
        ir = ProgramIR(tuple(self.out))
        diags = validate(ir)
        if diags:
            raise SemanticError(
                "; ".join(d.render() for d in diags), {"diagnostics": [d.to_dict() for d in diags]}
            )
        return ir

    def block(self) -> None:
        self.expect(":")
        if self.tok.kind != "newline":
            raise self.fail("end of line")
        self.i += 1
        self.expect_kind("indent", "indented block")
        while self.tok.kind not in ("dedent", "eof"):
            if self.tok.kind == "newline":
                self.i += 1
                continue
            self.statement()
        if self.tok.kind == "dedent":
            self.i += 1

    def skip_block(self) -> None:
        """Advance past a block without lowering it (for loop bodies)."""
        self.expect(":")
        if self.tok.kind != "newline":
            raise self.fail("end of line")
        self.i += 1
        self.expect_kind("indent", "indented block")
        depth = 1
        while depth:
            k = self.tok.kind
            if k == "eof":
                return
            if k == "indent":
                depth += 1
            elif k == "dedent":
                depth -= 1
            self.i += 1

    def statement(self) -> None:
        t = self.tok
        if t.kind != "name":
            raise self.fail("statement")
        if t.text in _UNSUPPORTED_KEYWORDS:
            what = {"while": "while-loops", "def": "function definitions (and recursion)"}.get(
                t.text, f"{t.text!r} statements"
            )
            raise self.unsupported(f"{what} are not supported")
        if t.text == "for":
            return self.for_stmt()
        if t.text == "if":
            return self.if_stmt()
        if t.text == "output" and self.peek().text == "(":
            return self.output_stmt()
        if t.text in _RESERVED:
            raise self.fail("statement")
        if self.peek().kind == "op" and self.peek().text == "=":
            return self.assignment()
        if self.peek().kind == "op" and self.peek().text in ("(", ".", "["):
            raise self.unsupported("expression statements have no effect; assign the result")
        self.i += 1
        raise self.fail("'='")

    def output_stmt(self) -> None:
        t = self.tok
        if self.branch_depth:
            raise self.unsupported("output() inside an if/else branch", t)
        self.i += 1
        self.expect("(")
        name = self.expect_kind("name", "variable")
        var = self.lookup_var(name)
        self.expect(")")
        self.end_of_statement()
        self.out.append(Output(var))

    def for_stmt(self) -> None:
        self.expect("for")
        var_tok = self.expect_kind("name", "loop variable")
        if var_tok.text in _RESERVED or var_tok.text in BUILTINS:
            raise ParseError("invalid loop variable", var_tok.line, var_tok.column, ("identifier",))
        if var_tok.text in self.env:
            raise self.unsupported(f"loop variable {var_tok.text!r} shadows a dataframe", var_tok)
        self.expect("in")
        if self.tok.kind == "name" and self.tok.text not in self.consts:
            raise self.unsupported("for-loops must iterate over a literal list")
        self.expect("[")
        items = [self.literal()]
        while self.accept(","):
            if self.at("]"):
                break
            items.append(self.literal())
        self.expect("]")
        if len(items) > MAX_UNROLL:
            raise LimitError(
                f"loop has {len(items)} iterations (limit {MAX_UNROLL})", var_tok.line, var_tok.column
            )
        body = self.i
        saved = self.consts.get(var_tok.text, _MISSING)
        for item in items:
            self.i = body
            self.consts[var_tok.text] = item
            self.block()
        if saved is _MISSING:
            self.consts.pop(var_tok.text, None)
        else:
            self.consts[var_tok.text] = saved

    def if_stmt(self) -> None:
        if_tok = self.expect("if")
        cond = self.condition()
        before = dict(self.env)
        consts_before = dict(self.consts)
        self.branch_depth += 1
        self.assigned_stack.append(set())
        self.block()
        then_assigned = self.assigned_stack.pop()
        then_env = dict(self.env)
        self.env = dict(before)
        self.consts = dict(consts_before)
        if self.at("elif"):
            raise self.unsupported("elif is not supported; nest if/else instead")
        if not self.at("else"):
            raise self.unsupported("if without else is not supported", if_tok)
        self.expect("else")
        self.assigned_stack.append(set())
        self.block()
        else_assigned = self.assigned_stack.pop()
        else_env = dict(self.env)
        self.branch_depth -= 1
        if then_assigned != else_assigned:
            diff = sorted(then_assigned ^ else_assigned)
            raise self.unsupported(
                f"both branches must assign the same variables (differ in {', '.join(diff)})", if_tok
            )
        self.env = dict(before)
        self.consts = consts_before
        for name in sorted(then_assigned):
            joined = self.emit(self.fresh(name), BranchJoin(cond, then_env[name], else_env[name]))
            self.bind(name, joined)

    def condition(self) -> Cond:
        left = self.operand()
        t = self.tok
        if not (t.kind == "op" and t.text in _CMP_OPS):
            raise self.fail(*(repr(c) for c in _CMP_OPS))
        self.i += 1
        right = self.operand()
        return Cond(left, t.text, right)

    def operand(self) -> Operand:
        t = self.tok
        if t.kind == "name":
            self.i += 1
            if t.text in self.consts:
                return Operand(value=self.consts[t.text])
            if t.text in self.env:
                return Operand(var=self.env[t.text])
            raise ParseError(f"unknown name {t.text!r}", t.line, t.column, ("variable", "literal"))
        return Operand(value=self.literal())

    def literal(self) -> Any:
        t = self.tok
        if t.kind in ("number", "string"):
            self.i += 1
            return t.value
        if self.at("-") and self.peek().kind == "number":
            self.i += 2
            return -self.peek(-1).value
        if t.kind == "name" and t.text in self.consts:
            self.i += 1
            return self.consts[t.text]
        raise self.fail("number", "string")

    def assignment(self) -> None:
        target = self.expect_kind("name", "variable")
        if target.text in BUILTINS:
            raise ParseError(f"cannot assign to builtin {target.text!r}", target.line, target.column, ("identifier",))
        self.expect("=")
        t = self.tok
        if t.kind in ("number", "string") or (self.at("-") and self.peek().kind == "number"):
            value = self.literal()
            self.end_of_statement()
            self.env.pop(target.text, None)
            self.consts[target.text] = value
            return
        if t.kind != "name" or t.text in _RESERVED:
            raise self.fail("expression")
        nxt = self.peek()
        if nxt.kind == "op" and nxt.text == "(":
            self.call(target.text)
        elif nxt.kind == "op" and nxt.text == "[":
            self.subscript(target.text)
        elif nxt.kind == "op" and nxt.text == ".":
            self.method(target.text)
        else:
            self.i += 1
            if t.text in self.consts:
                value = self.consts[t.text]
                self.env.pop(target.text, None)
                self.consts[target.text] = value
            else:
                self.bind(target.text, self.lookup_var(t))
        self.end_of_statement()

    # -- expressions -----------------------------------------------------------

    def args(self) -> tuple[list[_Arg], dict[str, _Arg]]:
        self.expect("(")
        pos: list[_Arg] = []
        kw: dict[str, _Arg] = {}
        while not self.at(")"):
            if self.tok.kind == "name" and self.peek().kind == "op" and self.peek().text == "=":
                key = self.tok
                self.i += 2
                if key.text in kw:
                    raise ParseError(f"repeated keyword {key.text!r}", key.line, key.column)
                kw[key.text] = self.value()
            else:
                if kw:
                    raise self.fail("keyword argument")
                pos.append(self.value())
            if not self.accept(","):
                break
        self.expect(")")
        return pos, kw

    def value(self) -> _Arg:
        t = self.tok
        if t.kind == "name":
            self.i += 1
            return _Arg(t, "name", t.text)
        if t.kind == "string":
            self.i += 1
            return _Arg(t, "str", t.value)
        if t.kind == "number" or (self.at("-") and self.peek().kind == "number"):
            return _Arg(t, "num", self.literal())
        if self.accept("["):
            items: list[_Arg] = []
            while not self.at("]"):
                items.append(self.value())
                if not self.accept(","):
                    break
            self.expect("]")
            return _Arg(t, "list", items)
        if self.accept("{"):
            pairs: list[tuple[_Arg, _Arg]] = []
            while not self.at("}"):
                k = self.value()
                self.expect(":")
                pairs.append((k, self.value()))
                if not self.accept(","):
                    break
            self.expect("}")
            return _Arg(t, "dict", pairs)
        raise self.fail("argument")

    def convert(self, a: _Arg, kind: str) -> Any:
        if a.kind == "name" and kind != "var" and a.value in self.consts:
            a = _Arg(a.tok, "str" if isinstance(self.consts[a.value], str) else "num", self.consts[a.value])
        if kind == "var":
            if a.kind != "name":
                raise ParseError("expected a dataframe variable", a.tok.line, a.tok.column, ("variable",))
            return self.lookup_var(a.tok)
        if kind == "capsule":
            if a.kind == "str":
                return a.value
            raise self.unsupported("capsule ids must be string literals", a.tok)
        if kind == "str":
            if a.kind == "str":
                return a.value
            raise ParseError("expected a string", a.tok.line, a.tok.column, ("string",))
        if kind in ("num", "int"):
            if a.kind == "num" and not isinstance(a.value, bool):
                if kind == "int":
                    if isinstance(a.value, float) and not a.value.is_integer():
                        raise ParseError("expected an integer", a.tok.line, a.tok.column, ("integer",))
                    return int(a.value)
                return float(a.value)
            raise ParseError("expected a number", a.tok.line, a.tok.column, ("number",))
        if kind == "strs":
            if a.kind == "list":
                return tuple(self.convert(x, "str") for x in a.value)
            return (self.convert(a, "str"),)
        if kind == "literal":
            if a.kind in ("str", "num"):
                return a.value
            if a.kind == "name":
                raise self.unsupported(f"stub arguments must be literals, got {a.value!r}", a.tok)
            raise ParseError("expected a literal", a.tok.line, a.tok.column, ("number", "string"))
        raise AssertionError(kind)

    def bind_args(self, fname: Tok, params: Sequence[Param], pos: list[_Arg], kw: dict[str, _Arg]) -> dict[str, Any]:
        if len(pos) > len(params):
            raise ParseError(
                f"{fname.text}() takes at most {len(params)} arguments", fname.line, fname.column, ("')'",)
            )
        bound: dict[str, Any] = {}
        names = [p.name for p in params]
        for k, a in kw.items():
            if k not in names:
                raise ParseError(
                    f"{fname.text}() has no parameter {k!r}", a.tok.line, a.tok.column, tuple(names)
                )
        for idx, p in enumerate(params):
            if idx < len(pos):
                if p.name in kw:
                    raise ParseError(f"{p.name!r} given twice", fname.line, fname.column)
                bound[p.name] = self.convert(pos[idx], p.kind)
            elif p.name in kw:
                bound[p.name] = self.convert(kw[p.name], p.kind)
            elif p.required:
                raise ParseError(
                    f"{fname.text}() missing argument {p.name!r}", fname.line, fname.column, (p.name,)
                )
            else:
                bound[p.name] = p.default
        return bound

    def call(self, target: str) -> None:
        fname = self.expect_kind("name", "function")
        name = fname.text
        pos, kw = self.args()
        if name in _SIGNATURES:
            a = self.bind_args(fname, _SIGNATURES[name], pos, kw)
            expr: Expr
            if name == "read_capsule":
                expr = ReadCapsule(a["capsule_id"])
            elif name == "filter_groups":
                expr = FilterGroupsMinSize(a["src"], a["min_size"])
            elif name == "agg_all":
                expr = AggAll(a["src"], a["column"], a["func"])
            elif name == "laplace":
                expr = Laplace(a["src"], a["epsilon"], a["delta"], a["sensitivity"])
            elif name == "hash_column":
                expr = HashColumn(a["src"], a["column"])
            else:
                expr = Join(a["left"], a["right"], a["on"])
        elif name in self.stubs:
            params = (Param("src", "var"),) + tuple(Param(p, "literal") for p in self.stubs[name])
            a = self.bind_args(fname, params, pos, kw)
            expr = StubCall(name, a.pop("src"), tuple(a[p] for p in self.stubs[name]))
        else:
            raise self.unsupported(f"call to non-whitelisted function {name!r}", fname)
        self.bind(target, self.emit(self.fresh(target), expr))

    def subscript(self, target: str) -> None:
        src_tok = self.expect_kind("name", "variable")
        src = self.lookup_var(src_tok)
        self.expect("[")
        if self.at("["):
            cols = self.convert(self.value(), "strs")
            self.expect("]")
            self.bind(target, self.emit(self.fresh(target), Project(src, cols)))
            return
        if self.tok.kind == "string":
            raise self.unsupported('single-column access yields a series; use df[["col"]]')
        terms = [self.mask_term(src_tok.text)]
        while self.accept("&"):
            terms.append(self.mask_term(src_tok.text))
        self.expect("]")
        merged: dict[str, Interval] = {}
        for col, iv in terms:
            merged[col] = merged[col].intersect(iv) if col in merged else iv
        for col, iv in merged.items():
            if iv.is_empty:
                raise SemanticError(f"filter on {col!r} selects no values")
            src = self.emit(self.fresh(target), FilterRows(src, col, iv))
        self.bind(target, src)

    def mask_term(self, frame: str) -> tuple[str, Interval]:
        if self.accept("("):
            term = self.mask_term(frame)
            self.expect(")")
            return term
        if self.tok.kind == "name" and self.tok.text == frame:
            col = self.column_ref(frame)
            op = self.cmp_op()
            return col, _interval(op, self.number())
        if self.tok.kind == "number" or self.at("-") or (self.tok.kind == "name" and self.tok.text in self.consts):
            v = self.number()
            op = self.cmp_op()
            col = self.column_ref(frame)
            flipped = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}[op]
            return col, _interval(flipped, v)
        raise self.fail(f"{frame}[...]", "number", "'('")

    def column_ref(self, frame: str) -> str:
        t = self.expect_kind("name", frame)
        if t.text != frame:
            raise self.unsupported("a mask may only reference the frame being filtered", t)
        self.expect("[")
        col = self.convert(self.value(), "str")
        self.expect("]")
        return col

    def cmp_op(self) -> str:
        t = self.tok
        if t.kind == "op" and t.text in _CMP_OPS:
            self.i += 1
            if t.text == "!=":
                raise self.unsupported("'!=' does not describe an interval", t)
            return t.text
        raise self.fail(*(repr(c) for c in _CMP_OPS if c != "!="))

    def number(self) -> float:
        t = self.tok
        v = self.literal()
        if isinstance(v, str) or isinstance(v, bool):
            raise ParseError("expected a number", t.line, t.column, ("number",))
        return float(v)

    def method(self, target: str) -> None:
        src_tok = self.expect_kind("name", "variable")
        src = self.lookup_var(src_tok)
        self.expect(".")
        m = self.expect_kind("name", "method")
        if m.text == "drop":
            pos, kw = self.args()
            a = self.bind_args(m, (Param("columns", "strs"),), pos, kw)
            self.bind(target, self.emit(self.fresh(target), DropColumns(src, a["columns"])))
        elif m.text == "groupby":
            pos, kw = self.args()
            keys = self.bind_args(m, (Param("by", "strs"),), pos, kw)["by"]
            self.expect(".")
            agg = self.expect_kind("name", "'agg'")
            if agg.text != "agg":
                raise self.unsupported(f"groupby(...).{agg.text} is not supported; use .agg({{...}})", agg)
            pos, kw = self.args()
            if kw or len(pos) != 1 or pos[0].kind != "dict":
                raise ParseError("agg() takes one dict literal", agg.line, agg.column, ("{",))
            aggs = {}
            for k, v in pos[0].value:
                col = self.convert(k, "str")
                if col in aggs:
                    raise ParseError(f"column {col!r} aggregated twice", k.tok.line, k.tok.column)
                aggs[col] = self.convert(v, "str")
            expr = GroupAgg(src, keys, tuple(sorted(aggs.items())))
            self.bind(target, self.emit(self.fresh(target), expr))
        else:
            raise self.unsupported(f"method {m.text!r} is not whitelisted", m)


_MISSING = object()


def _interval(op: str, v: float) -> Interval:
    if math.isnan(v):
        raise SemanticError("NaN in comparison")
    return {
        ">=": Interval(v, INF, True, False),
        ">": Interval(v, INF, False, False),
        "<=": Interval(-INF, v, False, True),
        "<": Interval(-INF, v, False, False),
        "==": Interval(v, v, True, True),
    }[op]


def parse_program(source: str, registry: Any = None) -> ProgramIR:
    """Lower surface ``source`` to a validated :class:`ProgramIR`.

    ``registry`` (a :class:`~capsuleguard.analyzer.stubs.StubRegistry`)
    supplies the extension operators callable from source; without it only
    the built-in operators are accepted.
    """
    stubs = registry.surface_signatures() if registry is not None else {}
    return _Lowerer(source, stubs).program()
