"""Closed-form Marchenko-Pastur analytics for tau-overfitting linear models.

All spectral integrals are taken against MP(gamma), the limiting spectral law of
the whitened Gram matrix ``G = W W^T / p`` when ``n / p -> gamma``.  We write

    m(z)  = int 1 / (s + z)     dMP(s)     (Stieltjes transform at -z)
    m'(z) = int 1 / (s + z)^2   dMP(s)
    f(lam) = lam^2 m'(lam)      (asymptotic training-loss fraction of the ridge dual point)
    E(lam) = m(lam) - lam m'(lam) = int s / (s + lam)^2 dMP(s)

and the asymptotic minimal excess loss is ``sigma2 * gamma * E(lam*)`` where
``f(lam*) = tau``.

For ``gamma <= 1`` the closed forms are evaluated in rationalised form, which is
free of cancellation as ``z -> 0``.  For ``gamma > 1`` the continuous part of
MP(gamma) is the law of ``gamma * t`` with ``t ~ MP(1 / gamma)`` carrying mass
``1 / gamma``, so every transform is mapped onto the ``gamma < 1`` branch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

from scipy import integrate

from .errors import DivergenceError, DomainError, InfeasibleTau

BoundVariant = Literal["sqrt", "cube_root_legacy"]

# Fixed-point solver stopping rules.
FP_RESIDUAL_TOL = 1e-12
FP_WIDTH_TOL = 1e-14
FP_MAX_DOUBLINGS = 2000
FP_MAX_ITER = 500


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise DomainError(f"aspect ratio gamma must be positive and finite, got {gamma!r}")
    return gamma


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 <= tau <= 1.0):
        raise DomainError(f"overfit fraction tau must lie in [0, 1], got {tau!r}")
    return tau


def atom_mass(gamma: float) -> float:
    """Mass of MP(gamma) at zero, ``(1 - 1/gamma)_+``."""
    return max(0.0, 1.0 - 1.0 / gamma)


@dataclass(frozen=True)
class MpModel:
    """MP(gamma) with its support endpoints and zero atom."""

    gamma: float
    support_lo: float = field(init=False)
    support_hi: float = field(init=False)
    atom_at_zero: float = field(init=False)

    def __post_init__(self) -> None:
        gamma = check_gamma(self.gamma)
        root = math.sqrt(gamma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "support_lo", (1.0 - root) ** 2)
        object.__setattr__(self, "support_hi", (1.0 + root) ** 2)
        object.__setattr__(self, "atom_at_zero", atom_mass(gamma))


@dataclass(frozen=True)
class FixedPointSolution:
    lambda_star: float
    tau: float
    gamma: float
    residual: float
    boundary: bool = False  # tau sits exactly on the zero-atom mass


# ---------------------------------------------------------------------------
# density and quadrature


def mp_density(x: float, model: MpModel) -> float:
    """Density of the continuous part of MP(gamma); the zero atom is excluded."""
    a, b = model.support_lo, model.support_hi
    if x <= 0.0 or x < a or x > b:
        return 0.0
    return math.sqrt((b - x) * (x - a)) / (model.gamma * 2.0 * math.pi * x)


def _theta_to_x(theta: float, a: float, b: float) -> float:
    return a + (b - a) * math.sin(theta) ** 2


def mp_integrate(
    func: Callable[[float], float],
    gamma: float,
    *,
    atom_value: float | None = None,
    upper: float | None = None,
    epsabs: float = 1e-14,
    epsrel: float = 1e-12,
) -> float:
    """Integrate ``func`` against MP(gamma) by adaptive Gauss-Kronrod quadrature.

    The square-root edge singularities of the density are removed with the
    substitution ``x = a + (b - a) sin^2(theta)``, under which
    ``density(x) dx = (b - a)^2 sin^2 cos^2 / (pi gamma x) dtheta``.

    Parameters
    ----------
    func:
        Integrand on the continuous support.
    atom_value:
        Value to attribute to the zero atom (``func(0)`` is not evaluated since
        it is often singular).  Defaults to zero contribution.
    upper:
        Optional upper integration limit in ``x`` (for the CDF).
    """
    model = MpModel(gamma)
    a, b = model.support_lo, model.support_hi
    width = b - a
    theta_hi = math.pi / 2.0
    if upper is not None:
        if upper <= a:
            theta_hi = 0.0
        elif upper < b:
            theta_hi = math.asin(math.sqrt((upper - a) / width))

    def integrand(theta: float) -> float:
        s, c = math.sin(theta), math.cos(theta)
        x = a + width * s * s
        if x <= 0.0:
            return 0.0
        weight = width * width * s * s * c * c / (math.pi * model.gamma * x)
        return func(x) * weight

    total = 0.0
    if theta_hi > 0.0:
        total, _ = integrate.quad(integrand, 0.0, theta_hi, epsabs=epsabs, epsrel=epsrel, limit=200)
    if atom_value is not None and model.atom_at_zero > 0.0:
        total += model.atom_at_zero * atom_value
    return total


def mp_cdf(x: float, gamma: float) -> float:
    """Cumulative distribution function of MP(gamma), atom included."""
    if x < 0.0:
        return 0.0
    model = MpModel(gamma)
    if x >= model.support_hi:
        return 1.0
    return mp_integrate(lambda s: 1.0, gamma, atom_value=1.0, upper=x)


# ---------------------------------------------------------------------------
# Stieltjes transform and derived functionals


def _core(z: float, gamma: float) -> tuple[float, float, float, float]:
    """(m, m', f, E) at z >= 0 for gamma <= 1, all in cancellation-free form."""
    A = 1.0 - gamma + z
    root = math.sqrt(A * A + 4.0 * gamma * z)
    S = A + root
    m = 2.0 / S
    mp = 2.0 * (1.0 + (A + 2.0 * gamma) / root) / (S * S)
    E = 2.0 * ((1.0 - gamma) * S + 2.0 * gamma * z) / (root * S * S)
    return m, mp, z * z * mp, E


def _require_positive(z: float) -> float:
    z = float(z)
    if not z > 0.0:
        raise DomainError(f"Stieltjes transform is evaluated at -z with z > 0, got z={z!r}")
    return z


def stieltjes_m(z: float, gamma: float) -> float:
    """m(-z; gamma) = int 1/(s + z) dMP_gamma(s), zero atom included."""
    z = _require_positive(z)
    gamma = check_gamma(gamma)
    if gamma <= 1.0:
        return _core(z, gamma)[0]
    h = 1.0 / gamma
    return (1.0 - h) / z + h * h * _core(z * h, h)[0]


def stieltjes_m_prime(z: float, gamma: float) -> float:
    """m'(-z; gamma) = int 1/(s + z)^2 dMP_gamma(s)."""
    z = _require_positive(z)
    gamma = check_gamma(gamma)
    if gamma <= 1.0:
        return _core(z, gamma)[1]
    h = 1.0 / gamma
    return (1.0 - h) / (z * z) + h**3 * _core(z * h, h)[1]


def f_constraint(lam: float, gamma: float) -> float:
    """lam^2 m'(-lam; gamma), the limiting training-loss fraction at ridge scale lam."""
    gamma = check_gamma(gamma)
    lam = float(lam)
    if lam < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam!r}")
    if lam == 0.0:
        return atom_mass(gamma)
    if math.isinf(lam):
        return 1.0
    if gamma <= 1.0:
        return _core(lam, gamma)[2]
    h = 1.0 / gamma
    return (1.0 - h) + h * _core(lam * h, h)[2]


def excess_E(lam: float, gamma: float) -> float:
    """m(-lam) - lam m'(-lam) = int s/(s + lam)^2 dMP_gamma(s).

    At ``lam = 0`` the integral is ``int 1/s`` over the continuous part, which is
    finite unless the support touches zero (``gamma == 1``).
    """
    gamma = check_gamma(gamma)
    lam = float(lam)
    if lam < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam!r}")
    if math.isinf(lam):
        return 0.0
    if lam == 0.0 and gamma == 1.0:
        raise DivergenceError("int 1/s dMP_1(s) diverges at the lower support edge")
    if gamma <= 1.0:
        return _core(lam, gamma)[3]
    h = 1.0 / gamma
    return h * h * _core(lam * h, h)[3]


# ---------------------------------------------------------------------------
# fixed point and excess loss


def solve_fixed_point(tau: float, gamma: float) -> FixedPointSolution:
    """Solve ``f(lam, gamma) = tau`` for the Lagrange multiplier by bisection."""
    tau = check_tau(tau)
    gamma = check_gamma(gamma)
    atom = atom_mass(gamma)
    if tau < atom:
        raise InfeasibleTau(tau, atom)
    if tau == 1.0:
        return FixedPointSolution(math.inf, tau, gamma, 0.0)
    if tau == atom:
        return FixedPointSolution(0.0, tau, gamma, 0.0, boundary=atom > 0.0)

    lo, hi = 0.0, 1.0
    for _ in range(FP_MAX_DOUBLINGS):
        if f_constraint(hi, gamma) >= tau:
            break
        lo, hi = hi, 2.0 * hi
    else:  # pragma: no cover - f -> 1 guarantees termination for tau < 1
        raise RuntimeError("failed to bracket the fixed point")

    lam = 0.5 * (lo + hi)
    resid = abs(f_constraint(lam, gamma) - tau)
    for _ in range(FP_MAX_ITER):
        lam = 0.5 * (lo + hi)
        val = f_constraint(lam, gamma)
        resid = abs(val - tau)
        if resid <= FP_RESIDUAL_TOL or hi - lo <= FP_WIDTH_TOL * (1.0 + lam):
            break
        if val < tau:
            lo = lam
        else:
            hi = lam
    return FixedPointSolution(lam, tau, gamma, resid)


def analytic_excess_loss(tau: float, gamma: float, sigma2: float = 1.0) -> float:
    """Asymptotic minimal excess loss ``sigma2 * gamma * E(lam*, gamma)``.

    Returns ``math.inf`` when ``tau`` is below the zero-atom mass (no
    tau-overfitting linear model exists) and at the interpolation peak
    ``gamma == 1, tau == 0``.
    """
    if not sigma2 > 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2!r}")
    tau = check_tau(tau)
    gamma = check_gamma(gamma)
    if tau < atom_mass(gamma):
        return math.inf
    if tau == 1.0:
        return 0.0
    sol = solve_fixed_point(tau, gamma)
    try:
        return sigma2 * gamma * excess_E(sol.lambda_star, gamma)
    except DivergenceError:
        return math.inf


# ---------------------------------------------------------------------------
# lower bounds


def universal_bound(
    tau: float, n: int, p: int, sigma2: float = 1.0, variant: BoundVariant = "sqrt"
) -> float:
    """Distribution-free lower bound on the expected minimal excess loss.

    ``variant="sqrt"`` gives ``sigma2 (n/p) (1 - sqrt(tau))^2``;
    ``variant="cube_root_legacy"`` gives the weaker ``sigma2 (n/p) (1 - tau^(1/3))^4``.
    ``n`` and ``p`` may be passed as floats to evaluate at a limiting ratio.
    """
    tau = check_tau(tau)
    if n <= 0 or p <= 0:
        raise DomainError("n and p must be positive")
    ratio = n / p
    if variant == "sqrt":
        shape = (1.0 - math.sqrt(tau)) ** 2
    elif variant == "cube_root_legacy":
        shape = (1.0 - tau ** (1.0 / 3.0)) ** 4
    else:
        raise DomainError(f"unknown bound variant {variant!r}")
    return sigma2 * ratio * shape


def small_tau_bound(tau: float, gamma: float, sigma2: float = 1.0) -> float:
    """Square-root Taylor lower bound, valid for ``gamma < 1`` and ``tau <= 1 - gamma``."""
    tau = check_tau(tau)
    gamma = check_gamma(gamma)
    if gamma >= 1.0:
        raise DomainError("small-tau bound requires gamma < 1")
    if tau > 1.0 - gamma:
        raise DomainError(f"small-tau bound requires tau <= 1 - gamma = {1.0 - gamma!r}")
    return sigma2 * gamma / (1.0 - gamma) * (1.0 - math.sqrt(tau / (1.0 - gamma))) ** 2


def small_tau_linear_expansion(tau: float, gamma: float, sigma2: float = 1.0) -> float:
    """First-order expansion of the excess loss itself in ``sqrt(tau)`` around 0.

    Always below :func:`small_tau_bound`, since ``1 - 2x <= (1 - x)^2``.
    """
    tau = check_tau(tau)
    gamma = check_gamma(gamma)
    if gamma >= 1.0:
        raise DomainError("expansion requires gamma < 1")
    return sigma2 * gamma / (1.0 - gamma) * (1.0 - 2.0 * math.sqrt(tau / (1.0 - gamma)))


def peak_excess_loss(tau: float, sigma2: float = 1.0) -> float:
    """Exact minimal excess loss at ``gamma = 1``: ``sigma2 (1/(4 tau) + tau/4 - 1/2)``."""
    tau = check_tau(tau)
    if tau == 0.0:
        raise DivergenceError("the excess loss at the interpolation peak is infinite for tau = 0")
    return sigma2 * (0.25 / tau + 0.25 * tau - 0.5)


def monotonicity_diagnostic(
    tau: float, gamma_grid: Sequence[float]
) -> list[tuple[float, float]]:
    """Evaluate ``E(f^{-1}(tau, gamma), gamma)`` along a grid of aspect ratios.

    Pairs with ``tau`` below the zero-atom mass are skipped with a warning.  The
    returned values should increase strictly along a sorted grid.
    """
    tau = check_tau(tau)
    out: list[tuple[float, float]] = []
    for gamma in gamma_grid:
        gamma = check_gamma(gamma)
        atom = atom_mass(gamma)
        if tau < atom:
            warnings.warn(
                f"skipping gamma={gamma!r}: tau={tau!r} below atom mass {atom!r}",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        sol = solve_fixed_point(tau, gamma)
        out.append((gamma, excess_E(sol.lambda_star, gamma)))
    return out
