"""Laplace mechanism sampling by inverse CDF.

Uniform draws come from a numpy ``Generator`` over PCG64 seeded with the
job's 64-bit seed, so a seed fixes the whole noise sequence.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidScale


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _check(scale: float) -> float:
    try:
        b = float(scale)
    except (TypeError, ValueError):
        raise InvalidScale(f"scale must be a number, got {scale!r}") from None
    if not (b > 0 and math.isfinite(b)):
        raise InvalidScale(f"scale must be positive and finite, got {scale!r}")
    return b


def inverse_cdf(u: float, scale: float) -> float:
    """Laplace(0, scale) quantile at ``u`` in (0, 1)."""
    if u < 0.5:
        return scale * math.log(2.0 * u)
    return -scale * math.log(2.0 * (1.0 - u))


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    b = _check(scale)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return inverse_cdf(u, b)


def laplace_samples(scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
    b = _check(scale)
    u = rng.random(n)
    zeros = np.flatnonzero(u == 0.0)
    for i in zeros:  # probability 2**-53 per draw
        while u[i] == 0.0:
            u[i] = rng.random()
    lower = u < 0.5
    out = np.empty(n)
    out[lower] = b * np.log(2.0 * u[lower])
    out[~lower] = -b * np.log(2.0 * (1.0 - u[~lower]))
    return out


def scale_for(sensitivity: float, epsilon: float) -> float:
    return _check(float(sensitivity) / float(epsilon))
