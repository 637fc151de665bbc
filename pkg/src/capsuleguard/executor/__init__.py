"""Concrete execution of programs, the Laplace mechanism and the row-level oracle."""

from .interp import ExecOutcome, Frame, digest, execute
from .laplace import laplace_sample, laplace_samples, make_rng, scale_for
from .oracle import oracle_check
from .table import Table, read_csv, write_csv

__all__ = [
    "ExecOutcome",
    "Frame",
    "Table",
    "digest",
    "execute",
    "laplace_sample",
    "laplace_samples",
    "make_rng",
    "oracle_check",
    "read_csv",
    "scale_for",
    "write_csv",
]
