"""Exception hierarchy shared by every capsuleguard module.

Each exception carries a stable ``code`` string so the HTTP service and the
CLI can render machine-readable error bodies without inspecting class names.
"""

from __future__ import annotations

from typing import Any


class CapsuleGuardError(Exception):
    code = "error"

    def __init__(self, message: str, detail: Any = None) -> None:
        super().__init__(message)
        self.message = message
        self.detail = detail

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "detail": self.detail}


# -- parsing ---------------------------------------------------------------


class ParseError(CapsuleGuardError):
    """Malformed policy or program text.

    ``line`` and ``column`` are 1-based; ``expected`` is the sorted set of
    token descriptions that would have been accepted at that position.
    """

    code = "SyntaxError"

    def __init__(self, message: str, line: int, column: int, expected: tuple[str, ...] = ()) -> None:
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        where = f"{line}:{column}: {message}"
        if self.expected:
            where += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(where, {"line": line, "column": column, "expected": list(self.expected)})


class SemanticError(CapsuleGuardError):
    code = "SemanticError"


class SizeError(CapsuleGuardError):
    code = "SizeError"


class UnsupportedError(CapsuleGuardError):
    code = "UnsupportedError"

    def __init__(self, message: str, line: int | None = None, column: int | None = None) -> None:
        self.line = line
        self.column = column
        text = f"{line}:{column}: {message}" if line is not None else message
        super().__init__(text, {"line": line, "column": column})


class LimitError(UnsupportedError):
    code = "LimitError"


# -- analysis --------------------------------------------------------------


class AnalysisError(CapsuleGuardError):
    code = "AnalysisFailed"


class MissingCapsule(AnalysisError):
    code = "MissingCapsule"


class SchemaMismatch(AnalysisError):
    code = "SchemaMismatch"


class DuplicateStub(CapsuleGuardError):
    code = "DuplicateStub"


class MalformedDescriptor(CapsuleGuardError):
    code = "MalformedDescriptor"


# -- execution -------------------------------------------------------------


class ExecutionError(CapsuleGuardError):
    code = "ExecFailed"


class TypeMismatch(ExecutionError):
    code = "TypeMismatch"


class MissingColumn(ExecutionError):
    code = "MissingColumn"


class EmptyGroupDomain(ExecutionError):
    code = "EmptyGroupDomain"


class InvalidScale(ExecutionError):
    code = "InvalidScale"


class UnsupportedRequirement(CapsuleGuardError):
    code = "UnsupportedRequirement"


class CsvMalformed(CapsuleGuardError):
    code = "CsvMalformed"


# -- data manager ------------------------------------------------------------


class PolicyPending(CapsuleGuardError):
    """Raised instead of returning plaintext; ``residual`` is printable policy text."""

    code = "PolicyPending"

    def __init__(self, residual: str) -> None:
        super().__init__(f"policy requirements pending: {residual}", {"residual": residual})
        self.residual = residual


class NotAuthorized(CapsuleGuardError):
    code = "NotAuthorized"


class NotOwner(CapsuleGuardError):
    code = "NotOwner"


class UnknownPrincipal(CapsuleGuardError):
    code = "UnknownPrincipal"


class DecryptFailed(CapsuleGuardError):
    code = "DecryptFailed"


class DuplicateCapsule(CapsuleGuardError):
    code = "DuplicateCapsule"


class NotFound(CapsuleGuardError):
    code = "NotFound"


class DuplicatePrincipal(CapsuleGuardError):
    code = "DuplicatePrincipal"
