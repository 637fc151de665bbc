"""Registry of operator transfer descriptions ("tracing stubs").

Built-in IR operators are registered here exactly like user extensions, so
the analyzer dispatches every node through one lookup.  Registries are
immutable: :meth:`StubRegistry.register` returns a new registry and leaves
the receiver untouched, which gives running analyses a stable snapshot.

A user descriptor is usually declarative.  It names its surface parameters
and says which of them describe a row restriction, dropped columns or hashed
columns; the analyzer and the executor both derive their semantics from that
single description so they cannot drift apart.  A descriptor may instead
carry explicit ``transfer``/``concrete`` callables.
"""

from __future__ import annotations

import re
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

from ..errors import DuplicateStub, MalformedDescriptor
from ..policy.model import REQUIREMENT_TYPES

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_KINDS = frozenset(t.kind for t in REQUIREMENT_TYPES)
_RESERVED = frozenset({"output", "stub"})


@dataclass(frozen=True)
class StubDescriptor:
    params: tuple[str, ...] = ()
    row_filter: tuple[str, str, str] | None = None  # (column, lower, upper) param names
    drops: tuple[str, ...] = ()
    hashes: tuple[str, ...] = ()
    discharges: frozenset[str] = frozenset()
    transfer: Callable[..., Any] | None = None
    concrete: Callable[..., Any] | None = None
    builtin: bool = False
    doc: str = ""

    def implied_kinds(self) -> frozenset[str]:
        kinds: set[str] = set()
        if self.row_filter:
            kinds.add("FILTER")
        if self.drops or self.hashes:
            kinds.add("REDACT")
        return frozenset(kinds)

    def validate(self) -> None:
        if len(set(self.params)) != len(self.params):
            raise MalformedDescriptor("repeated parameter name", {"params": list(self.params)})
        for p in self.params:
            if not _IDENT.match(p) or p == "src":
                raise MalformedDescriptor(f"bad parameter name {p!r}")
        named = list(self.row_filter or ()) + list(self.drops) + list(self.hashes)
        unknown = [p for p in named if p not in self.params]
        if unknown:
            raise MalformedDescriptor(
                f"descriptor refers to undeclared parameter(s) {unknown}", {"params": list(self.params)}
            )
        if self.row_filter is not None and len(self.row_filter) != 3:
            raise MalformedDescriptor("row_filter must name (column, lower, upper) parameters")
        bad = set(self.discharges) - _KINDS
        if bad:
            raise MalformedDescriptor(f"unknown requirement kind(s) {sorted(bad)}")
        if self.transfer is not None and not callable(self.transfer):
            raise MalformedDescriptor("transfer must be callable")
        if self.concrete is not None and not callable(self.concrete):
            raise MalformedDescriptor("concrete must be callable")
        if (self.transfer is None) != (self.concrete is None) and not self.builtin:
            raise MalformedDescriptor("custom stubs must provide both transfer and concrete, or neither")
        if self.transfer is None and not self.builtin:
            # A declarative stub can only discharge what its shape implies.
            overclaim = set(self.discharges) - self.implied_kinds()
            if overclaim:
                raise MalformedDescriptor(
                    f"declared discharges {sorted(overclaim)} are not backed by the descriptor"
                )

    def effective_discharges(self) -> frozenset[str]:
        return frozenset(self.discharges) | self.implied_kinds()


@dataclass(frozen=True)
class StubRegistry:
    entries: Mapping[str, StubDescriptor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def register(self, name: str, descriptor: StubDescriptor, override: bool = False) -> StubRegistry:
        if not isinstance(name, str) or not _IDENT.match(name) or name in _RESERVED:
            raise MalformedDescriptor(f"bad stub name {name!r}")
        if not isinstance(descriptor, StubDescriptor):
            raise MalformedDescriptor(f"expected a StubDescriptor, got {type(descriptor).__name__}")
        descriptor.validate()
        if name in self.entries and not override:
            raise DuplicateStub(f"operator {name!r} is already registered", {"name": name})
        new = dict(self.entries)
        new[name] = descriptor
        return StubRegistry(new)

    def lookup(self, name: str) -> StubDescriptor:
        try:
            return self.entries[name]
        except KeyError:
            raise MalformedDescriptor(f"no stub registered for operator {name!r}", {"name": name}) from None

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def surface_signatures(self) -> dict[str, tuple[str, ...]]:
        """Parameter lists of the user stubs callable from program text."""
        return {n: d.params for n, d in self.entries.items() if not d.builtin}


def register_stub(
    registry: StubRegistry, name: str, descriptor: StubDescriptor, override: bool = False
) -> StubRegistry:
    return registry.register(name, descriptor, override=override)


_DEFAULT: StubRegistry | None = None


def default_registry() -> StubRegistry:
    """Registry holding only the built-in operators."""
    global _DEFAULT
    if _DEFAULT is None:
        from .transfer import BUILTIN_TRANSFERS

        reg = StubRegistry()
        for op, fn in BUILTIN_TRANSFERS.items():
            reg = reg.register(op, StubDescriptor(transfer=fn, builtin=True, doc=fn.__doc__ or ""))
        _DEFAULT = reg
    return _DEFAULT
