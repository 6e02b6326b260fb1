"""Seeded Monte Carlo experiments and analytic figure tables.

Random streams
--------------
Every trial owns an independent generator, so trials can run in any order or
in parallel and still reproduce bit for bit:

* key  = splitmix64(splitmix64(master_seed) XOR trial_index)   (64-bit arithmetic)
* bits = Philox-4x64 counter-based generator keyed with ``key`` (numpy ``Philox``)
* Gaussians by Box-Muller on ``u1 = 1 - U``, ``u2 = U`` with ``U`` the
  generator's uniform doubles in [0, 1): ``sqrt(-2 ln u1) * (cos, sin)(2 pi u2)``,
  cosines filling the first half of each request and sines the second.

Within a trial the draws happen in a fixed order: features, noise, beta_star.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from . import mp_analytics as mp
from .empirical_solver import ProblemInstance, solve_spectral, spectrum_of, whiten
from .errors import ConfigError, DomainError

log = logging.getLogger(__name__)

FeatureDist = Literal["gaussian_iid", "gaussian_covariance"]
NoiseDist = Literal["gaussian", "student_t", "rademacher_scaled"]
BetaSpec = Literal["zero", "unit_sphere_random"]

MASK64 = (1 << 64) - 1
STUDENT_T_MIN_DOF = 4.5  # 4 + eta with eta = 0.5


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_key(master_seed: int, trial_index: int) -> int:
    return splitmix64(splitmix64(master_seed & MASK64) ^ (trial_index & MASK64))


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=trial_key(master_seed, trial_index)))


def box_muller(rng: np.random.Generator, size) -> NDArray[np.float64]:
    """Standard normals from the generator's uniforms via Box-Muller."""
    shape = (size,) if isinstance(size, int) else tuple(size)
    count = int(np.prod(shape))
    half = (count + 1) // 2
    u1 = 1.0 - rng.random(half)
    u2 = rng.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:count].reshape(shape)


def load_covariance(spec: str, p: int) -> NDArray[np.float64]:
    """Resolve a covariance from ``ar1:<rho>``, ``diag:<lo>:<hi>``, or a .npy/.csv/.txt path."""
    if spec.startswith("ar1:"):
        rho = float(spec.split(":", 1)[1])
        if not -1.0 < rho < 1.0:
            raise ConfigError("ar1 correlation must lie in (-1, 1)")
        idx = np.arange(p)
        return rho ** np.abs(idx[:, None] - idx[None, :])
    if spec.startswith("diag:"):
        lo, hi = (float(v) for v in spec.split(":")[1:3])
        if not 0.0 < lo <= hi:
            raise ConfigError("diag spectrum needs 0 < lo <= hi")
        return np.diag(np.geomspace(lo, hi, p))
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"unknown covariance spec or missing file: {spec!r}")
    cov = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (p, p):
        raise ConfigError(f"covariance file has shape {cov.shape}, expected ({p}, {p})")
    return cov


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    p: int
    sigma: float = 1.0
    tau_grid: tuple[float, ...] = (0.25,)
    trials: int = 100
    master_seed: int = 0
    feature_dist: FeatureDist = "gaussian_iid"
    covariance_spec: str | None = None
    noise_dist: NoiseDist = "gaussian"
    student_t_dof: float = 5.0
    beta_star_spec: BetaSpec = "zero"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        if self.n < 1 or self.p < 1:
            raise ConfigError("n and p must be positive")
        if not self.sigma > 0.0:
            raise ConfigError("sigma must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.tau_grid or any(not 0.0 <= t <= 1.0 for t in self.tau_grid):
            raise ConfigError("tau_grid values must lie in [0, 1]")
        if not 0 <= self.master_seed <= MASK64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.feature_dist not in ("gaussian_iid", "gaussian_covariance"):
            raise ConfigError(f"unsupported feature_dist {self.feature_dist!r}")
        if self.feature_dist == "gaussian_covariance" and not self.covariance_spec:
            raise ConfigError("gaussian_covariance needs covariance_spec")
        if self.noise_dist not in ("gaussian", "student_t", "rademacher_scaled"):
            raise ConfigError(f"unsupported noise_dist {self.noise_dist!r}")
        if self.noise_dist == "student_t" and not self.student_t_dof > STUDENT_T_MIN_DOF:
            raise ConfigError(f"student_t dof must exceed {STUDENT_T_MIN_DOF}")
        if self.beta_star_spec not in ("zero", "unit_sphere_random"):
            raise ConfigError(f"unsupported beta_star_spec {self.beta_star_spec!r}")

    @property
    def gamma(self) -> float:
        return self.n / self.p

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    def covariance(self) -> NDArray[np.float64]:
        if self.feature_dist == "gaussian_iid":
            return np.eye(self.p)
        return load_covariance(self.covariance_spec, self.p)


def _noise(config: ExperimentConfig, rng: np.random.Generator) -> NDArray[np.float64]:
    n, sigma = config.n, config.sigma
    if config.noise_dist == "gaussian":
        return sigma * box_muller(rng, n)
    if config.noise_dist == "rademacher_scaled":
        return sigma * np.where(rng.random(n) < 0.5, -1.0, 1.0)
    dof = config.student_t_dof
    z = box_muller(rng, n)
    chi2 = 2.0 * rng.standard_gamma(dof / 2.0, size=n)
    # unit variance: Var t_dof = dof / (dof - 2)
    return sigma * z / np.sqrt(chi2 / dof) * math.sqrt((dof - 2.0) / dof)


def sample_instance(
    config: ExperimentConfig, trial_index: int, covariance: NDArray[np.float64] | None = None
) -> ProblemInstance:
    """Draw the regression problem for one trial; deterministic in (seed, index)."""
    if not 0 <= trial_index < config.trials:
        raise ConfigError(f"trial_index {trial_index} outside [0, {config.trials})")
    rng = trial_rng(config.master_seed, trial_index)
    cov = config.covariance() if covariance is None else covariance
    Z = box_muller(rng, (config.n, config.p))
    if config.feature_dist == "gaussian_iid":
        features = Z
    else:
        features = Z @ np.linalg.cholesky(cov).T
    eps = _noise(config, rng)
    if config.beta_star_spec == "zero":
        beta = np.zeros(config.p)
    else:
        g = box_muller(rng, config.p)
        beta = g / np.linalg.norm(g)
    return ProblemInstance(
        config.n, config.p, config.sigma2, features, cov, features @ beta + eps, beta
    )


@dataclass(frozen=True)
class ExcessLossReport:
    tau: float
    gamma: float
    mc_mean: float
    mc_stderr: float
    infeasible_count: int
    analytic_value: float
    universal_bound_sqrt: float
    universal_bound_legacy: float
    small_tau_bound: float | None
    trials: int
    error_count: int = 0

    @property
    def bound_violated(self) -> bool:
        """True when the Monte Carlo mean sits more than 3 standard errors below the bound."""
        if not math.isfinite(self.mc_mean):
            return False
        return self.mc_mean < self.universal_bound_sqrt - 3.0 * self.mc_stderr


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    k = len(values)
    if k == 0:
        return math.inf, 0.0
    mean = math.fsum(values) / k
    if k == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (k - 1)
    return mean, math.sqrt(var / k)


def _run_trial(config: ExperimentConfig, cov, index: int) -> list[tuple[str, float]]:
    try:
        inst = sample_instance(config, index, cov)
        spec, noise = spectrum_of(*whiten(inst))
    except Exception as exc:  # per-trial failures are recorded, never fatal
        log.warning("trial %d failed during sampling: %s", index, exc)
        return [("error", math.nan)] * len(config.tau_grid)
    out = []
    for tau in config.tau_grid:
        try:
            res = solve_spectral(spec, noise, inst.n, inst.p, inst.sigma2, tau)
        except Exception as exc:
            log.warning("trial %d, tau=%g failed: %s", index, tau, exc)
            out.append(("error", math.nan))
            continue
        out.append((res.status, res.excess_lin_loss))
    return out


def _bounds(tau: float, n: int, p: int, sigma2: float) -> tuple[float, float, float, float | None]:
    gamma = n / p
    analytic = mp.analytic_excess_loss(tau, gamma, sigma2)
    sqrt_b = mp.universal_bound(tau, n, p, sigma2, "sqrt")
    legacy_b = mp.universal_bound(tau, n, p, sigma2, "cube_root_legacy")
    small = None
    if gamma < 1.0 and tau <= 1.0 - gamma:
        small = mp.small_tau_bound(tau, gamma, sigma2)
    return analytic, sqrt_b, legacy_b, small


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list[ExcessLossReport]:
    """Monte Carlo estimate of the minimal excess loss for each tau in the grid.

    Infeasible trials are counted and excluded from the mean; ``threads = 0``
    uses every available core.  Results do not depend on ``threads``.
    """
    cov = config.covariance()
    workers = (os.cpu_count() or 1) if threads == 0 else max(1, threads)
    indices = range(config.trials)
    if workers == 1:
        per_trial = [_run_trial(config, cov, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(lambda i: _run_trial(config, cov, i), indices))

    reports = []
    for j, tau in enumerate(config.tau_grid):
        values = [r[j][1] for r in per_trial if r[j][0] in ("constraint_active", "interior_zero")]
        infeasible = sum(1 for r in per_trial if r[j][0] == "infeasible")
        errors = sum(1 for r in per_trial if r[j][0] == "error")
        mean, stderr = _mean_stderr(values)
        analytic, sqrt_b, legacy_b, small = _bounds(tau, config.n, config.p, config.sigma2)
        reports.append(
            ExcessLossReport(
                tau, config.gamma, mean, stderr, infeasible, analytic,
                sqrt_b, legacy_b, small, config.trials, errors,
            )
        )
    return reports


def gram_eigenvalues(n: int, p: int, seed: int) -> NDArray[np.float64]:
    """Eigenvalues of ``W W^T / p`` for i.i.d. standard Gaussian ``W``."""
    config = ExperimentConfig(n=n, p=p, trials=1, master_seed=seed)
    spec, _ = spectrum_of(*whiten(sample_instance(config, 0)))
    return spec.eigenvalues


def ks_distance_to_mp(eigenvalues, gamma: float) -> float:
    """Kolmogorov distance between the empirical spectral CDF and MP(gamma)."""
    x = np.sort(np.asarray(eigenvalues, dtype=np.float64))
    n = x.size
    cdf = np.array([mp.mp_cdf(float(v), gamma) for v in x])
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


# ---------------------------------------------------------------------------
# figure tables


@dataclass
class FigureTable:
    name: str
    header: tuple[str, ...]
    rows: list[tuple[float | None, ...]] = field(default_factory=list)


DEFAULT_FIG1A_GAMMAS = (0.1, 0.25, 0.5, 1.0, 2.0)
DEFAULT_FIG1B_TAUS = (0.0, 0.25, 0.5, 0.75)
DEFAULT_FIG2_GAMMAS = (0.1, 0.25, 0.5, 0.75)
DEFAULT_TAU_GRID = tuple(np.linspace(0.0, 1.0, 101))
DEFAULT_INV_GAMMA_GRID = tuple(np.linspace(0.1, 10.0, 100))


def figure_curves(
    mode: Literal["fig1a", "fig1b", "fig2"],
    *,
    gammas: Sequence[float] | None = None,
    taus: Sequence[float] | None = None,
    tau_grid: Sequence[float] | None = None,
    inv_gamma_grid: Sequence[float] | None = None,
    sigma2: float = 1.0,
) -> list[FigureTable]:
    """Analytic curve tables for the excess-loss figures; no sampling involved.

    fig1a: one table per fixed gamma over a tau grid (excess loss and universal bound).
    fig1b: one table per fixed tau over a 1/gamma grid (same columns).
    fig2:  one table per fixed gamma < 1 over a tau grid (excess loss and
           small-tau bound, ``None`` outside ``tau <= 1 - gamma``).
    Divergent cells carry ``math.inf``.
    """
    tau_grid = DEFAULT_TAU_GRID if tau_grid is None else tau_grid
    tables: list[FigureTable] = []
    if mode == "fig1a":
        for g in DEFAULT_FIG1A_GAMMAS if gammas is None else gammas:
            t = FigureTable(f"fig1a_gamma_{g:g}", ("tau", "analytic_excess", "universal_sqrt"))
            for tau in tau_grid:
                t.rows.append((tau, mp.analytic_excess_loss(tau, g, sigma2), mp.universal_bound(tau, g, 1.0, sigma2)))
            tables.append(t)
    elif mode == "fig1b":
        grid = DEFAULT_INV_GAMMA_GRID if inv_gamma_grid is None else inv_gamma_grid
        for tau in DEFAULT_FIG1B_TAUS if taus is None else taus:
            t = FigureTable(
                f"fig1b_tau_{tau:g}", ("inv_gamma", "gamma", "analytic_excess", "universal_sqrt")
            )
            for inv in grid:
                g = 1.0 / inv
                t.rows.append((inv, g, mp.analytic_excess_loss(tau, g, sigma2), mp.universal_bound(tau, g, 1.0, sigma2)))
            tables.append(t)
    elif mode == "fig2":
        for g in DEFAULT_FIG2_GAMMAS if gammas is None else gammas:
            if not 0.0 < g < 1.0:
                raise DomainError("fig2 needs 0 < gamma < 1")
            t = FigureTable(f"fig2_gamma_{g:g}", ("tau", "analytic_excess", "small_tau_bound"))
            for tau in tau_grid:
                small = mp.small_tau_bound(tau, g, sigma2) if tau <= 1.0 - g else None
                t.rows.append((tau, mp.analytic_excess_loss(tau, g, sigma2), small))
            tables.append(t)
    else:
        raise DomainError(f"unknown figure mode {mode!r}")
    return tables
