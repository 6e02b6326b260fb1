"""Numeric verifiers for the inequalities behind the universal lower bound.

Each check returns the two sides of an inequality so callers can assert on
them with their own tolerance; the ``sweep_*`` helpers run randomised property
sweeps and return a :class:`SweepReport` with the worst case found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .empirical_solver import deterministic_gap, eigen_fixed_point
from .errors import DomainError

GE_SLACK = 1e-12


@dataclass(frozen=True)
class EigenSample:
    """Nonincreasing nonnegative values ``a_1 >= ... >= a_n`` and a scalar ``x >= 0``."""

    values: tuple[float, ...]
    x: float

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise DomainError("EigenSample needs at least one value")
        if any(v < 0.0 for v in vals):
            raise DomainError("values must be nonnegative")
        if any(vals[i] < vals[i + 1] for i in range(len(vals) - 1)):
            raise DomainError("values must be sorted nonincreasing")
        if vals[0] <= 0.0:
            raise DomainError("at least one value must be strictly positive")
        if not self.x >= 0.0:
            raise DomainError("x must be nonnegative")

    @classmethod
    def from_unsorted(cls, values: Sequence[float], x: float) -> "EigenSample":
        return cls(tuple(sorted((float(v) for v in values), reverse=True)), x)


def g_function(sample: EigenSample) -> float:
    """Left-hand side of the rearranged deterministic inequality; always ``>= 1``.

    ``g(x) = sqrt(mean a_i/(a_i+x)^2) * sqrt(mean a_i) + sqrt(mean (x/(a_i+x))^2)``.
    Zero entries contribute nothing to the first mean and 1 to the second
    (for ``x > 0``); at ``x = 0`` they are dropped from the first mean.
    """
    a = np.asarray(sample.values)
    x = sample.x
    n = a.size
    pos = a > 0.0
    first = math.fsum(a[pos] / (a[pos] + x) ** 2) / n
    if x > 0.0:
        shrink = np.where(pos, x / (a + x), 1.0)
        second = math.fsum(shrink**2) / n
    else:
        second = float(np.count_nonzero(~pos)) / n
    return math.sqrt(first) * math.sqrt(math.fsum(a) / n) + math.sqrt(second)


def am_hm_check(values: Sequence[float]) -> tuple[float, float]:
    """``(sum 1/x_i, n^2 / sum x_i)``; the first is never smaller."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0 or np.any(x <= 0.0):
        raise DomainError("AM-HM check requires strictly positive values")
    return math.fsum(1.0 / x), x.size**2 / math.fsum(x)


def chebyshev_sum_check(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """``(mean a_i b_i, mean a * mean b)`` for ``a`` nondecreasing and ``b`` nonincreasing."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise DomainError("a and b must be nonempty vectors of equal length")
    if np.any(np.diff(a) < 0.0):
        raise DomainError("a must be sorted nondecreasing")
    if np.any(np.diff(b) > 0.0):
        raise DomainError("b must be sorted nonincreasing")
    n = a.size
    return math.fsum(a * b) / n, (math.fsum(a) / n) * (math.fsum(b) / n)


def invalid_bound_counterexample(epsilon: float, tau: float) -> tuple[float, float, float]:
    """Two-eigenvalue spectrum showing the harmonic-mean variant of the bound fails.

    Eigenvalues are ``(1 - eps, eps)`` in descending order.  Returns
    ``(lhs, rhs, lambda_star)`` with ``lhs = mean a_i/(a_i+lam*)^2`` and
    ``rhs = mean(1/a_i) (1 - sqrt(tau))^2``.  For small ``eps`` the multiplier
    stays bounded away from zero, so ``lhs`` stays bounded while ``rhs`` blows
    up.  At ``eps = 0.5`` both sides coincide.
    """
    if not 0.0 < epsilon <= 0.5:
        raise DomainError("epsilon must lie in (0, 0.5]")
    if not 0.0 < tau < 1.0:
        raise DomainError("tau must lie in (0, 1)")
    a = np.array([1.0 - epsilon, epsilon])
    lam = eigen_fixed_point(a, tau)
    lhs = math.fsum(a / (a + lam) ** 2) / 2.0
    rhs = math.fsum(1.0 / a) / 2.0 * (1.0 - math.sqrt(tau)) ** 2
    return lhs, rhs, lam


def deterministic_bound_check(eigenvalues: Sequence[float], tau_target: float) -> tuple[float, float]:
    """``(lhs, rhs)`` of ``mean lam_i/(lam_i+lam*)^2 >= (n / sum lam_i)(1 - sqrt(tau))^2``.

    ``lam*`` solves the unit-coefficient fixed point for ``tau_target``; the
    right-hand side uses the fraction actually realised at ``lam*`` so that
    solver round-off does not leak into the comparison.
    """
    ev = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    if ev.size == 0 or ev[0] <= 0.0 or np.any(ev < 0.0):
        raise DomainError("spectrum must be nonnegative with a positive entry")
    lam = eigen_fixed_point(ev, tau_target)
    if math.isinf(lam):
        return 0.0, 0.0
    return deterministic_gap(ev, lam)


# ---------------------------------------------------------------------------
# randomised sweeps


@dataclass
class SweepReport:
    name: str
    trials: int
    failures: int = 0
    worst_margin: float = math.inf
    counterexample: dict | None = field(default=None)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, margin: float, sample: dict, slack: float = GE_SLACK) -> None:
        """Log one ``lhs - rhs`` margin (negative beyond ``slack`` is a failure)."""
        if margin < self.worst_margin:
            self.worst_margin = margin
            if margin < -slack:
                self.counterexample = sample
        if margin < -slack:
            self.failures += 1


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def sweep_g_function(trials: int = 10_000, seed: int = 0) -> SweepReport:
    """``g(x) >= 1 - 1e-12`` on log-uniform samples."""
    rng = np.random.default_rng(seed)
    rep = SweepReport("g_function >= 1", trials)
    for _ in range(trials):
        n = int(rng.integers(2, 51))
        sample = EigenSample.from_unsorted(_log_uniform(rng, 1e-4, 1e4, n), float(_log_uniform(rng, 1e-6, 1e6)))
        rep.record(g_function(sample) - 1.0, {"values": sample.values, "x": sample.x})
    return rep


def sweep_g_monotone(samples: int = 200, grid: int = 60, seed: int = 1) -> SweepReport:
    """``g`` never increases by more than 1e-12 along a sorted x-grid."""
    rng = np.random.default_rng(seed)
    rep = SweepReport("g_function nonincreasing", samples)
    xs = np.concatenate([[0.0], np.logspace(-6, 6, grid)])
    for _ in range(samples):
        n = int(rng.integers(2, 51))
        vals = sorted(_log_uniform(rng, 1e-4, 1e4, n), reverse=True)
        g = [g_function(EigenSample(tuple(vals), float(x))) for x in xs]
        steps = np.diff(g)
        k = int(np.argmax(steps))
        rep.record(-float(steps[k]), {"values": tuple(vals), "x_pair": (xs[k], xs[k + 1])})
    return rep


def sweep_am_hm(trials: int = 10_000, seed: int = 2) -> SweepReport:
    rng = np.random.default_rng(seed)
    rep = SweepReport("AM-HM", trials)
    for _ in range(trials):
        x = _log_uniform(rng, 1e-4, 1e4, int(rng.integers(1, 51)))
        lhs, rhs = am_hm_check(x)
        rep.record((lhs - rhs) / rhs, {"values": x.tolist()})
    return rep


def sweep_chebyshev(trials: int = 10_000, seed: int = 3) -> SweepReport:
    rng = np.random.default_rng(seed)
    rep = SweepReport("Chebyshev sum", trials)
    for _ in range(trials):
        n = int(rng.integers(1, 51))
        a = np.sort(rng.normal(size=n) * _log_uniform(rng, 1e-2, 1e2))
        b = np.sort(rng.normal(size=n) * _log_uniform(rng, 1e-2, 1e2))[::-1]
        lhs, rhs = chebyshev_sum_check(a, b)
        scale = max(1.0, float(np.abs(a).max() * np.abs(b).max()))
        rep.record((rhs - lhs) / scale, {"a": a.tolist(), "b": b.tolist()})
    return rep


def sweep_deterministic_bound(
    trials: int = 1000, taus: Sequence[float] = tuple(np.round(np.arange(0.1, 1.0, 0.1), 10)), seed: int = 4
) -> SweepReport:
    rng = np.random.default_rng(seed)
    rep = SweepReport("deterministic eigenvalue bound", trials * len(taus))
    for _ in range(trials):
        ev = _log_uniform(rng, 1e-3, 1e3, int(rng.integers(2, 51)))
        for tau in taus:
            lhs, rhs = deterministic_bound_check(ev, float(tau))
            rep.record(lhs - rhs, {"eigenvalues": ev.tolist(), "tau": float(tau)})
    return rep


def sweep_invalid_counterexample(
    epsilons: Sequence[float] = (1e-3, 1e-4, 1e-6), taus: Sequence[float] = (0.6, 0.75, 0.9)
) -> SweepReport:
    """The harmonic-mean variant must fail: ``lhs < rhs`` everywhere on the grid."""
    rep = SweepReport("invalid bound is violated", len(epsilons) * len(taus))
    for eps in epsilons:
        for tau in taus:
            lhs, rhs, lam = invalid_bound_counterexample(eps, tau)
            rep.record(rhs - lhs, {"epsilon": eps, "tau": tau, "lhs": lhs, "rhs": rhs}, slack=0.0)
    return rep
