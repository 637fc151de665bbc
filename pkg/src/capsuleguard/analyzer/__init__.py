"""Static policy analysis: abstract interpretation of programs over capsule metadata."""

from .analyze import (
    AnalysisEnv,
    AnalysisResult,
    CapsuleMeta,
    TraceEntry,
    analyze,
    as_meta,
    residual_for,
)
from .domain import AbstractValue, AnalystContext, discharge, join_values
from .stubs import StubDescriptor, StubRegistry, default_registry, register_stub

__all__ = [
    "AbstractValue",
    "AnalysisEnv",
    "AnalysisResult",
    "AnalystContext",
    "CapsuleMeta",
    "StubDescriptor",
    "StubRegistry",
    "TraceEntry",
    "analyze",
    "as_meta",
    "default_registry",
    "discharge",
    "join_values",
    "register_stub",
    "residual_for",
]
