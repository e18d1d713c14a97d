"""Exactly-k laws: independent Poisson counts conditioned on a fixed sum.

Conditioning independent ``Poisson(rate_i)`` variables on ``sum z_i = k``
gives a multinomial law with ``k`` trials and probabilities
``p_i = rate_i / sum(rates)``; each coordinate's conditional marginal is
``Binomial(k, p_i)`` with expectation ``k p_i``. All pmf evaluations go
through log space with log-gamma factorials so totals up to ~1e4 stay
representable.

Enumeration helpers over the full support are provided as oracles for tests
and the verification suite; they are exact for small ``n`` and ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import gammaln

from .errors import (
    DimensionMismatch,
    NonFiniteInput,
    OutOfSupport,
    ProbabilityUnderflow,
    ValidationError,
)

#: Normalized probabilities below this are rejected at construction.
MIN_PROBABILITY = 1e-300


@dataclass(frozen=True)
class ExactlyK:
    """Positive Poisson rates plus the conditioning total ``sum z = total``."""

    rates: np.ndarray
    total: int
    probs: np.ndarray

    @property
    def n(self) -> int:
        return self.rates.shape[0]


def exactly_k(rates, total: int) -> ExactlyK:
    """Build and validate an exactly-k law.

    Rejects normalized probabilities below ``MIN_PROBABILITY`` so silent
    underflow cannot occur later in pmf evaluations.
    """
    rates = np.array(rates, dtype=float)
    if rates.ndim != 1 or rates.shape[0] < 1:
        raise DimensionMismatch("rates must be a nonempty 1-D vector")
    if not np.all(np.isfinite(rates)):
        raise NonFiniteInput("rates contain NaN or Inf")
    if np.any(rates <= 0):
        raise ValidationError("all rates must be strictly positive")
    if int(total) != total or total < 0:
        raise ValidationError(f"total must be a nonnegative integer, got {total!r}")
    probs = rates / rates.sum()
    if np.any(probs < MIN_PROBABILITY):
        raise ProbabilityUnderflow(
            "a normalized probability underflows float64; rescale the rates"
        )
    rates.setflags(write=False)
    probs.setflags(write=False)
    return ExactlyK(rates=rates, total=int(total), probs=probs)


def _check_counts(ek: ExactlyK, z) -> np.ndarray:
    z = np.asarray(z)
    if z.shape != (ek.n,):
        raise DimensionMismatch(f"expected count vector of length {ek.n}, got {z.shape}")
    if np.any(z != np.floor(z)) or np.any(z < 0):
        raise ValidationError("counts must be nonnegative integers")
    return z.astype(np.int64)


def constrained_pmf(ek: ExactlyK, z) -> float:
    """Multinomial pmf of ``z`` under the conditioned law.

    Exactly zero when ``sum(z) != total``.
    """
    z = _check_counts(ek, z)
    if int(z.sum()) != ek.total:
        return 0.0
    log_p = gammaln(ek.total + 1) - np.sum(gammaln(z + 1.0))
    log_p += float(np.sum(np.where(z > 0, z * np.log(ek.probs), 0.0)))
    return float(np.exp(log_p))


def marginal_pmf(ek: ExactlyK, i: int, z_i: int) -> float:
    """``Binomial(total, p_i)`` pmf at ``z_i``, evaluated in log space."""
    if not 0 <= i < ek.n:
        raise DimensionMismatch(f"coordinate index {i} out of range [0, {ek.n})")
    if int(z_i) != z_i or z_i < 0 or z_i > ek.total:
        raise OutOfSupport(f"z={z_i!r} outside support [0, {ek.total}]")
    return float(_binom_pmf(np.asarray(float(z_i)), ek.total, float(ek.probs[i])))


def marginal_expectation(ek: ExactlyK, i: int) -> float:
    """Expectation ``total * p_i`` of the conditional marginal."""
    if not 0 <= i < ek.n:
        raise DimensionMismatch(f"coordinate index {i} out of range [0, {ek.n})")
    return float(ek.total * ek.probs[i])


def sample(ek: ExactlyK, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` exact samples; every row sums to ``total``.

    numpy's generator draws multinomials by the sequential conditional
    binomial method, which is stable and O(n) per sample.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    return rng.multinomial(ek.total, ek.probs, size=int(count)).astype(np.int64)


def _binom_pmf(x: np.ndarray, k: int, p: float) -> np.ndarray:
    """Vectorized Binomial(k, p) pmf; zero outside [0, k]."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log(0) terms are defined as 0 (p = 1 happens for n = 1)
        succ = np.where(x > 0, x * np.log(p), 0.0)
        fail = np.where(k - x > 0, (k - x) * np.log1p(-p), 0.0)
        log_pmf = (
            gammaln(k + 1.0) - gammaln(x + 1.0) - gammaln(k - x + 1.0) + succ + fail
        )
    inside = (x >= 0) & (x <= k)
    return np.where(inside, np.exp(np.where(inside, log_pmf, -np.inf)), 0.0)


def _binom_cdf(x: int, k: int, p: float) -> float:
    """CDF by direct log-space pmf summation (exact at desk scale)."""
    if x < 0:
        return 0.0
    if x >= k:
        return 1.0
    return float(np.sum(_binom_pmf(np.arange(0, x + 1), k, p)))


def compositions(total: int, n_parts: int) -> Iterator[tuple[int, ...]]:
    """Enumerate all count vectors of length ``n_parts`` summing to ``total``."""
    if n_parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, n_parts - 1):
            yield (first,) + rest


def enumerated_support(ek: ExactlyK) -> tuple[np.ndarray, np.ndarray]:
    """All support points and their pmf values (exact enumeration oracle)."""
    points = np.array(list(compositions(ek.total, ek.n)), dtype=np.int64)
    pmf = np.array([constrained_pmf(ek, z) for z in points])
    return points, pmf
