"""Exact per-dataset minimal excess linear loss.

For a sampled problem the minimal excess linear loss is

    min ||b||^2   s.t.   (1/n) ||W b - xi||^2 <= tau sigma^2,

with ``W = Phi Sigma^{-1/2}`` and ``xi = y - Phi beta_star``.  Writing the
eigendecomposition ``G = W W^T / p = U diag(lam_i) U^T`` and ``c = U^T xi``, the
ridge dual point ``b(lam) = W^T (lam I + G)^{-1} xi / p`` has

    residual / (n sigma^2) = (1/(n sigma^2)) sum (lam / (lam_i + lam))^2 c_i^2
    ||b(lam)||^2           = (1/p)           sum lam_i / (lam_i + lam)^2 c_i^2

and the optimum is ``||b(lam*)||^2`` at the multiplier making the constraint
active.  Everything below works on ``(Spectrum, ProjectedNoise)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .errors import AssumptionError, DomainError, IllConditioned

log = logging.getLogger(__name__)

Status = Literal["constraint_active", "interior_zero", "infeasible"]

RANK_TOL = 1e-10
CONDITION_LIMIT = 1e12
RATIO_TOL = 1e-12
BISECT_MAX_ITER = 200
NEGATIVE_EIG_TOL = 1e-10


@dataclass(frozen=True)
class ProblemInstance:
    """A sampled regression problem ``y = Phi beta_star + xi``."""

    n: int
    p: int
    sigma2: float
    features: NDArray[np.float64]
    covariance: NDArray[np.float64]
    targets: NDArray[np.float64]
    beta_star: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.n < 1 or self.p < 1:
            raise DomainError("n and p must be positive")
        if not self.sigma2 > 0.0:
            raise DomainError("sigma2 must be positive")
        if self.features.shape != (self.n, self.p):
            raise DomainError(f"features must be {self.n}x{self.p}, got {self.features.shape}")
        if self.covariance.shape != (self.p, self.p):
            raise DomainError(f"covariance must be {self.p}x{self.p}")
        if self.targets.shape != (self.n,):
            raise DomainError(f"targets must have length {self.n}")
        if self.beta_star.shape != (self.p,):
            raise DomainError(f"beta_star must have length {self.p}")

    @classmethod
    def from_arrays(
        cls,
        features,
        targets,
        *,
        sigma2: float = 1.0,
        covariance=None,
        beta_star=None,
    ) -> "ProblemInstance":
        phi = np.atleast_2d(np.asarray(features, dtype=np.float64))
        n, p = phi.shape
        cov = np.eye(p) if covariance is None else np.asarray(covariance, dtype=np.float64)
        beta = np.zeros(p) if beta_star is None else np.asarray(beta_star, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64).reshape(n)
        return cls(n, p, float(sigma2), phi, cov, y, beta)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of ``G = W W^T / p``, sorted descending, plus their eigenvectors."""

    eigenvalues: NDArray[np.float64]
    rank: int
    p: int
    eigenvectors: NDArray[np.float64] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def zero_mask(self) -> NDArray[np.bool_]:
        return self.eigenvalues <= RANK_TOL * max(float(self.eigenvalues[0]), 0.0)

    @property
    def kernel_fraction(self) -> float:
        return float(np.count_nonzero(self.zero_mask)) / self.n


@dataclass(frozen=True)
class ProjectedNoise:
    """Noise coordinates in the eigenbasis of G."""

    coeffs: NDArray[np.float64]
    total_sq_norm: float


@dataclass(frozen=True)
class SolveResult:
    excess_lin_loss: float
    lambda_star: float
    achieved_train_ratio: float
    status: Status
    # multiplier of the eigenvalue-only (unit-coefficient) fixed point, if solvable
    eigen_lambda: float | None = None


def inverse_sqrt_psd(cov: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetric inverse square root, rejecting condition numbers above 1e12."""
    cov = np.asarray(cov, dtype=np.float64)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise IllConditioned("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    top = float(vals[-1])
    if top <= 0.0 or float(vals[0]) <= top / CONDITION_LIMIT:
        raise IllConditioned(
            f"covariance eigenvalues span [{vals[0]:.3e}, {top:.3e}]; "
            f"condition number exceeds {CONDITION_LIMIT:.0e}"
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


def whiten(instance: ProblemInstance) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return ``W = Phi Sigma^{-1/2}`` and the total noise ``xi = y - Phi beta_star``."""
    root_inv = inverse_sqrt_psd(instance.covariance)
    W = instance.features @ root_inv
    xi = instance.targets - instance.features @ instance.beta_star
    return W, xi


def spectrum_of(
    W: NDArray[np.float64], xi: NDArray[np.float64]
) -> tuple[Spectrum, ProjectedNoise]:
    """Eigendecompose ``G = W W^T / p`` and project ``xi`` onto its eigenbasis."""
    W = np.asarray(W, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if W.ndim != 2 or xi.shape != (W.shape[0],):
        raise DomainError("W must be n x p and xi of length n")
    if not np.all(np.isfinite(W)):
        raise DomainError("W has non-finite entries")
    n, p = W.shape
    G = (W @ W.T) / p
    try:
        vals, vecs = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigendecomposition of the {n}x{n} Gram matrix failed "
            f"(Frobenius norm {np.linalg.norm(G):.3e})"
        ) from exc
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    if vals[-1] < -NEGATIVE_EIG_TOL * max(1.0, float(vals[0])):
        log.warning("Gram matrix has eigenvalue %.3e < 0; clamping", vals[-1])
    vals = np.clip(vals, 0.0, None)
    coeffs = vecs.T @ xi
    spec = Spectrum(vals, min(n, p), p, vecs)
    return spec, ProjectedNoise(coeffs, float(xi @ xi))


def check_rank(spec: Spectrum) -> None:
    """Exactly ``n - min(n, p)`` eigenvalues may vanish."""
    zeros = int(np.count_nonzero(spec.zero_mask))
    expected = spec.n - spec.rank
    if zeros != expected:
        raise AssumptionError(
            f"Gram matrix has {zeros} zero eigenvalues, expected {expected} "
            f"(rank(Phi) must equal min(n, p) = {spec.rank})"
        )


def _shrink(lam: float, spec: Spectrum) -> NDArray[np.float64]:
    """lam / (lam_i + lam), with zero eigenvalues mapping to 1 for every lam."""
    ev = spec.eigenvalues
    zero = spec.zero_mask
    if math.isinf(lam):
        return np.ones_like(ev)
    out = np.ones_like(ev)
    nz = ~zero
    out[nz] = lam / (ev[nz] + lam)
    return out


def residual_ratio(
    lam: float, spec: Spectrum, noise: ProjectedNoise, n: int, sigma2: float
) -> float:
    """Training loss of the ridge dual point divided by ``sigma^2``."""
    if lam < 0.0:
        raise DomainError("lambda must be nonnegative")
    w = _shrink(lam, spec)
    return math.fsum(w * w * noise.coeffs**2) / (n * sigma2)


def ridge_dual_point(lam: float, spec: Spectrum, noise: ProjectedNoise, p: int) -> float:
    """Squared norm ``||b(lam)||^2`` of the ridge dual point.

    At ``lam = 0`` this is the minimum-norm interpolant of the nonzero modes.
    """
    if lam < 0.0:
        raise DomainError("lambda must be nonnegative")
    if math.isinf(lam):
        return 0.0
    ev = spec.eigenvalues
    nz = ~spec.zero_mask
    terms = ev[nz] / (ev[nz] + lam) ** 2 * noise.coeffs[nz] ** 2
    return math.fsum(terms) / p


def _bisect_multiplier(func, target: float, hi: float) -> float:
    """Smallest-residual root of a nondecreasing ``func`` on ``[0, hi]``."""
    lo = 0.0
    while func(hi) < target:
        lo, hi = hi, 2.0 * hi
    lam = hi
    for _ in range(BISECT_MAX_ITER):
        lam = 0.5 * (lo + hi)
        val = func(lam)
        if abs(val - target) <= RATIO_TOL or hi - lo <= 1e-15 * hi:
            break
        if val < target:
            lo = lam
        else:
            hi = lam
    return lam


def eigen_fixed_point(eigenvalues, tau: float) -> float:
    """Multiplier solving ``(1/n) sum (lam/(lam_i + lam))^2 = tau`` on eigenvalues alone.

    Raises ``DomainError`` when ``tau`` is below the fraction of zero eigenvalues.
    """
    ev = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    n = ev.size
    spec = Spectrum(ev, n, n)
    kernel = spec.kernel_fraction
    if tau < kernel - RATIO_TOL:
        raise DomainError(f"tau={tau!r} below kernel fraction {kernel!r}; no multiplier exists")
    if tau >= 1.0:
        return math.inf
    if tau <= kernel:
        return 0.0
    unit = ProjectedNoise(np.ones(n), float(n))
    return _bisect_multiplier(
        lambda lam: residual_ratio(lam, spec, unit, n, 1.0), tau, max(float(ev[0]), 1e-300)
    )


def deterministic_gap(eigenvalues, lam: float) -> tuple[float, float]:
    """(lhs, rhs) of ``(1/n) sum lam_i/(lam_i+lam)^2 >= (n / sum lam_i)(1 - sqrt(tau))^2``.

    ``tau`` is the unit-coefficient training fraction realised at ``lam``.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64)
    n = ev.size
    pos = ev > RANK_TOL * ev.max()
    shrink = np.ones(n)
    if lam > 0.0:
        shrink[pos] = lam / (ev[pos] + lam)
        lhs_terms = ev[pos] / (ev[pos] + lam) ** 2
    else:
        shrink[pos] = 0.0
        lhs_terms = 1.0 / ev[pos]
    tau = math.fsum(shrink**2) / n
    lhs = math.fsum(lhs_terms) / n
    rhs = n / math.fsum(ev) * (1.0 - math.sqrt(tau)) ** 2
    return lhs, rhs


def solve_spectral(
    spec: Spectrum, noise: ProjectedNoise, n: int, p: int, sigma2: float, tau: float
) -> SolveResult:
    """Minimal excess linear loss from precomputed spectral data."""
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [0, 1], got {tau!r}")
    check_rank(spec)
    full = noise.total_sq_norm / (n * sigma2)
    if full <= tau:
        return SolveResult(0.0, math.inf, full, "interior_zero")
    floor = residual_ratio(0.0, spec, noise, n, sigma2)
    if floor > tau + RATIO_TOL:
        return SolveResult(math.inf, 0.0, floor, "infeasible")

    if floor >= tau:
        lam = 0.0
    else:
        lam = _bisect_multiplier(
            lambda x: residual_ratio(x, spec, noise, n, sigma2),
            tau,
            max(float(spec.eigenvalues[0]), 1e-300),
        )
    ratio = residual_ratio(lam, spec, noise, n, sigma2)
    loss = ridge_dual_point(lam, spec, noise, p)

    eigen_lam = None
    if tau >= spec.kernel_fraction:
        eigen_lam = eigen_fixed_point(spec.eigenvalues, tau)
        if math.isfinite(eigen_lam):
            lhs, rhs = deterministic_gap(spec.eigenvalues, eigen_lam)
            if lhs < rhs * (1.0 - 1e-9) - 1e-12:
                raise RuntimeError(
                    f"deterministic eigenvalue inequality violated: {lhs!r} < {rhs!r}"
                )
    return SolveResult(loss, lam, ratio, "constraint_active", eigen_lam)


def solve_min_excess(instance: ProblemInstance, tau: float) -> SolveResult:
    """Minimal excess linear loss of a tau-overfitting linear model on ``instance``."""
    W, xi = whiten(instance)
    spec, noise = spectrum_of(W, xi)
    return solve_spectral(spec, noise, instance.n, instance.p, instance.sigma2, tau)


# ---------------------------------------------------------------------------
# independent oracle


def _unit_directions(angles: NDArray[np.float64], dim: int) -> NDArray[np.float64]:
    if dim == 2:
        return np.stack([np.cos(angles[:, 0]), np.sin(angles[:, 0])], axis=1)
    th, ph = angles[:, 0], angles[:, 1]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def brute_force_oracle(instance: ProblemInstance, tau: float, grid_resolution: int = 64) -> float:
    """Minimal excess linear loss by direct search in the original coordinates.

    Solves ``min d^T Sigma d  s.t.  (1/n)||Phi d - xi||^2 <= tau sigma^2`` without
    whitening or eigendecomposition.  For ``tau > 0`` it scans directions ``u``
    on the unit sphere, takes the first feasible point along each ray in closed
    form, and refines the best direction by repeated grid zooming.  ``tau = 0``
    is an equality constraint, solved by Cholesky plus least squares.

    Returns ``math.inf`` when no feasible point exists.  Exponential in ``p``;
    only ``p <= 3`` is supported.
    """
    if instance.p > 3:
        raise DomainError("brute_force_oracle supports p <= 3 only")
    if grid_resolution < 4:
        raise DomainError("grid_resolution must be at least 4")
    Phi = instance.features
    Sigma = instance.covariance
    xi = instance.targets - Phi @ instance.beta_star
    n, p = Phi.shape
    budget = n * tau * instance.sigma2
    c0 = float(xi @ xi) - budget
    if c0 <= 0.0:
        return 0.0

    if tau == 0.0:
        L = np.linalg.cholesky(Sigma)
        # d = L^{-T} e minimises ||e|| over Phi L^{-T} e = xi
        A = np.linalg.solve(L, Phi.T).T
        e, *_ = np.linalg.lstsq(A, xi, rcond=None)
        miss = float(np.sum((A @ e - xi) ** 2))
        if miss > 1e-18 * max(1.0, float(xi @ xi)):
            return math.inf
        return float(e @ e)

    def along_rays(U: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Objective at the first feasible point on each ray, and the ray's best slack."""
        V = U @ Phi.T
        a = np.einsum("ij,ij->i", V, V)
        b = V @ xi
        disc = b * b - a * c0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = c0 / (b + np.sqrt(np.clip(disc, 0.0, None)))
            quad = np.einsum("ij,jk,ik->i", U, Sigma, U)
            value = np.where((disc >= 0.0) & (b > 0.0), t * t * quad, np.inf)
            # smallest residual reachable along the ray (t >= 0), minus the budget
            slack = np.where(b > 0.0, c0 - b * b / np.where(a > 0, a, np.inf), c0)
        return value, slack

    if p == 1:
        value, _ = along_rays(np.array([[1.0], [-1.0]]))
        return float(value.min())

    dim = p - 1
    lo = np.zeros(dim)
    hi = np.array([2.0 * np.pi]) if p == 2 else np.array([np.pi, 2.0 * np.pi])
    best_val, best_slack = math.inf, math.inf
    for _ in range(200):
        axes = [np.linspace(lo[k], hi[k], grid_resolution) for k in range(dim)]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        value, slack = along_rays(_unit_directions(mesh, p))
        if np.isfinite(value).any():
            i = int(np.argmin(value))
            best_val = min(best_val, float(value[i]))
        else:
            # phase one: steer towards the feasible cone
            i = int(np.argmin(slack))
            best_slack = min(best_slack, float(slack[i]))
        centre = mesh[i]
        step = (hi - lo) / (grid_resolution - 1)
        if np.all(step < 1e-13):
            break
        idx = np.unravel_index(i, (grid_resolution,) * dim)
        if any(k in (0, grid_resolution - 1) for k in idx):
            # best point on the box edge: slide the box instead of shrinking it
            half = 0.5 * (hi - lo)
        else:
            half = 3.0 * step
        lo, hi = centre - half, centre + half
    if math.isfinite(best_val):
        return best_val
    return math.inf


def noise_quadratic_check(
    A, sigma2: float, trials: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo mean of ``xi^T A xi`` for i.i.d. N(0, sigma2) noise, and ``sigma2 Tr A``."""
    A = np.asarray(A, dtype=np.float64)
    if trials < 1:
        raise DomainError("trials must be at least 1")
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    total = 0.0
    chunk = 8192
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        xi = rng.standard_normal((k, n)) * math.sqrt(sigma2)
        total += math.fsum(np.einsum("ki,ij,kj->k", xi, A, xi))
        done += k
    return total / trials, sigma2 * float(np.trace(A))
