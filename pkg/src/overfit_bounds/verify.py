"""Property suites behind ``overfit-bounds verify``.

Each suite returns a list of :class:`~overfit_bounds.inequality_lab.SweepReport`;
a report with ``failures > 0`` carries the first worst counterexample found.
Functions are looked up through their modules at call time so tests can
patch a broken implementation in and watch the suite catch it.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import empirical_solver as es
from . import inequality_lab as lab
from . import mp_analytics as mp
from .inequality_lab import SweepReport

SUITES = ("inequalities", "stieltjes", "solver")

QUAD_REL_TOL = 1e-9
ORACLE_REL_TOL = 1e-4
KKT_TOL = 1e-10


def suite_inequalities(quick: bool = False) -> list[SweepReport]:
    k = 10 if quick else 1
    return [
        lab.sweep_g_function(10_000 // k),
        lab.sweep_g_monotone(200 // k),
        lab.sweep_am_hm(10_000 // k),
        lab.sweep_chebyshev(10_000 // k),
        lab.sweep_deterministic_bound(1000 // k),
        lab.sweep_invalid_counterexample(),
    ]


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def suite_stieltjes(quick: bool = False) -> list[SweepReport]:
    """Closed forms against quadrature, small-z limits and fixed-point residuals."""
    gammas = (0.05, 0.3, 0.9, 1.0, 2.0, 5.0)
    zs = (1e-3, 0.1, 1.0, 10.0)
    quad = SweepReport("stieltjes closed form vs quadrature", 2 * len(gammas) * len(zs))
    for g in gammas:
        for z in zs:
            m_q = mp.mp_integrate(lambda s: 1.0 / (s + z), g, atom_value=1.0 / z)
            mp_q = mp.mp_integrate(lambda s: 1.0 / (s + z) ** 2, g, atom_value=1.0 / z**2)
            sample = {"gamma": g, "z": z}
            quad.record(QUAD_REL_TOL - _rel(mp.stieltjes_m(z, g), m_q), sample | {"quantity": "m"}, 0.0)
            quad.record(QUAD_REL_TOL - _rel(mp.stieltjes_m_prime(z, g), mp_q), sample | {"quantity": "m'"}, 0.0)

    limits = SweepReport("stieltjes limits at zero", 6)
    for g in (0.1, 0.5, 0.9):
        z = 1e-8
        limits.record(1e-4 - _rel(mp.stieltjes_m(z, g), 1.0 / (1.0 - g)), {"gamma": g, "quantity": "m"}, 0.0)
        limits.record(1e-4 - _rel(mp.stieltjes_m_prime(z, g), 1.0 / (1.0 - g) ** 3), {"gamma": g, "quantity": "m'"}, 0.0)

    fixed = SweepReport("fixed point residual", 0)
    for g in (0.1, 0.5, 1.0, 2.0, 4.0):
        for tau in (0.05, 0.25, 0.5, 0.75, 0.95):
            if tau <= mp.atom_mass(g):
                continue
            fixed.trials += 1
            sol = mp.solve_fixed_point(tau, g)
            resid = abs(mp.f_constraint(sol.lambda_star, g) - tau)
            fixed.record(1e-10 - resid, {"gamma": g, "tau": tau, "lambda": sol.lambda_star}, 0.0)

    peak = SweepReport("peak closed form", 5)
    for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
        diff = abs(mp.peak_excess_loss(tau) - mp.analytic_excess_loss(tau, 1.0))
        peak.record(1e-8 - diff, {"tau": tau}, 0.0)
    return [quad, limits, fixed, peak]


def _random_instance(rng: np.random.Generator) -> es.ProblemInstance:
    n = int(rng.integers(1, 4))
    p = int(rng.integers(1, 4))
    phi = rng.normal(size=(n, p))
    A = rng.normal(size=(p, p))
    cov = A @ A.T + 0.5 * np.eye(p)
    beta = rng.normal(size=p)
    y = phi @ beta + rng.normal(size=n)
    return es.ProblemInstance(n, p, 1.0, phi, cov, y, beta)


def suite_solver(quick: bool = False, seed: int = 7) -> list[SweepReport]:
    """Spectral solver against the brute-force oracle, plus KKT and monotonicity checks."""
    rng = np.random.default_rng(seed)
    count = 20 if quick else 100
    taus = (0.0, 0.1, 0.5, 0.9)
    oracle = SweepReport("solver vs brute-force oracle", count * len(taus))
    kkt = SweepReport("KKT consistency", 0)
    mono = SweepReport("loss nonincreasing in tau", count)
    for _ in range(count):
        inst = _random_instance(rng)
        spec, noise = es.spectrum_of(*es.whiten(inst))
        losses = []
        for tau in taus:
            res = es.solve_min_excess(inst, tau)
            ref = es.brute_force_oracle(inst, tau)
            sample = {"features": inst.features.tolist(), "targets": inst.targets.tolist(), "tau": tau}
            if math.isinf(res.excess_lin_loss) or math.isinf(ref):
                ok = math.isinf(res.excess_lin_loss) and math.isinf(ref)
                oracle.record(0.0 if ok else -1.0, sample | {"solver": res.excess_lin_loss, "oracle": ref})
            else:
                err = abs(res.excess_lin_loss - ref) - ORACLE_REL_TOL * (1.0 + ref)
                oracle.record(-err, sample | {"solver": res.excess_lin_loss, "oracle": ref}, 0.0)
            if res.status == "constraint_active":
                kkt.trials += 1
                ratio = es.residual_ratio(res.lambda_star, spec, noise, inst.n, inst.sigma2)
                kkt.record(KKT_TOL - abs(ratio - tau), sample | {"lambda": res.lambda_star}, 0.0)
            losses.append(res.excess_lin_loss)
        # inf - inf is no change; finite -> inf is a violation
        with np.errstate(invalid="ignore"):
            steps = np.nan_to_num(np.diff(np.array(losses)), nan=0.0)
        worst = float(steps.max())
        mono.record(-worst, {"losses": losses, "taus": taus}, 1e-12)
    return [oracle, kkt, mono]


SUITE_FUNCS: dict[str, Callable[..., list[SweepReport]]] = {
    "inequalities": suite_inequalities,
    "stieltjes": suite_stieltjes,
    "solver": suite_solver,
}


def run_suites(selector: str = "all", quick: bool = False) -> list[SweepReport]:
    names = SUITES if selector == "all" else (selector,)
    reports: list[SweepReport] = []
    for name in names:
        if name not in SUITE_FUNCS:
            raise KeyError(f"unknown suite {name!r}")
        reports.extend(SUITE_FUNCS[name](quick=quick))
    return reports
