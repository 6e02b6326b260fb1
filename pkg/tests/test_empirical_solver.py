from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from overfit_bounds import empirical_solver as es
from overfit_bounds.errors import AssumptionError, DomainError, IllConditioned


def spectral(eigs, coeffs, p):
    eigs = np.asarray(eigs, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    spec = es.Spectrum(eigs, min(len(eigs), p), p)
    return spec, es.ProjectedNoise(coeffs, float(coeffs @ coeffs))


def random_instance(rng, n, p, noise=1.0):
    phi = rng.normal(size=(n, p))
    A = rng.normal(size=(p, p))
    cov = A @ A.T + 0.5 * np.eye(p)
    beta = rng.normal(size=p)
    return es.ProblemInstance(n, p, 1.0, phi, cov, phi @ beta + noise * rng.normal(size=n), beta)


# --- instance, whitening, spectrum -------------------------------------------


def test_instance_validates_shapes():
    with pytest.raises(DomainError):
        es.ProblemInstance(2, 2, 1.0, np.zeros((2, 3)), np.eye(2), np.zeros(2), np.zeros(2))
    with pytest.raises(DomainError):
        es.ProblemInstance(2, 2, 0.0, np.zeros((2, 2)), np.eye(2), np.zeros(2), np.zeros(2))


def test_whiten_identity_covariance():
    rng = np.random.default_rng(0)
    inst = es.ProblemInstance.from_arrays(rng.normal(size=(4, 3)), rng.normal(size=4))
    W, _ = es.whiten(inst)
    assert_array_equal(W, inst.features)


def test_whiten_diagonal_example():
    inst = es.ProblemInstance.from_arrays([[2.0, 3.0]], [0.0], covariance=np.diag([4.0, 1.0]))
    W, _ = es.whiten(inst)
    assert_allclose(W, [[1.0, 3.0]], rtol=1e-15)


def test_whiten_noiseless_target():
    rng = np.random.default_rng(1)
    phi = rng.normal(size=(5, 2))
    beta = np.array([0.3, -1.2])
    inst = es.ProblemInstance.from_arrays(phi, phi @ beta, beta_star=beta)
    _, xi = es.whiten(inst)
    assert_array_equal(xi, np.zeros(5))


def test_whiten_rejects_ill_conditioned():
    inst = es.ProblemInstance.from_arrays(np.ones((2, 2)), [0.0, 0.0], covariance=np.diag([1.0, 1e-14]))
    with pytest.raises(IllConditioned):
        es.whiten(inst)


def test_spectrum_identity_gram():
    p = 4
    xi = np.array([1.0, -2.0, 0.5, 3.0])
    spec, noise = es.spectrum_of(math.sqrt(p) * np.eye(p), xi)
    assert_allclose(spec.eigenvalues, np.ones(p), rtol=1e-14)
    assert_allclose(np.sort(np.abs(noise.coeffs)), np.sort(np.abs(xi)), rtol=1e-14)


def test_spectrum_rank_deficient_example():
    spec, _ = es.spectrum_of(np.array([[math.sqrt(2.0)], [0.0]]), np.array([0.0, 1.0]))
    assert_allclose(spec.eigenvalues, [2.0, 0.0], atol=1e-15)
    assert int(spec.zero_mask.sum()) == 1
    es.check_rank(spec)  # n - min(n, p) = 1 zero eigenvalue is expected


def test_spectrum_trace_and_parseval():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(5, 8))
    xi = rng.normal(size=5)
    spec, noise = es.spectrum_of(W, xi)
    assert_allclose(spec.eigenvalues.sum(), np.trace(W @ W.T) / 8, rtol=1e-10)
    assert_allclose(np.sum(noise.coeffs**2), noise.total_sq_norm, rtol=1e-8)
    assert np.all(np.diff(spec.eigenvalues) <= 0)


def test_rank_violation_detected():
    phi = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0, 1.0, 0.0]])
    inst = es.ProblemInstance.from_arrays(phi, [1.0, 0.0, 2.0])
    with pytest.raises(AssumptionError):
        es.solve_min_excess(inst, 0.3)


# --- residual and dual point ---------------------------------------------------


def test_residual_ratio_examples():
    spec, noise = spectral([1.0, 1.0], [3.0, 3.0], 2)
    assert_allclose(es.residual_ratio(1.0, spec, noise, 2, 1.0), 9.0 / 4.0, rtol=1e-15)
    assert_allclose(es.residual_ratio(math.inf, spec, noise, 2, 1.0), 18.0 / 2.0)
    assert es.residual_ratio(0.0, spec, noise, 2, 1.0) == 0.0


def test_residual_ratio_counts_kernel_at_zero():
    spec, noise = spectral([2.0, 0.0], [0.0, 1.0], 1)
    assert es.residual_ratio(0.0, spec, noise, 2, 1.0) == 0.5


def test_ridge_dual_point_examples():
    spec, noise = spectral([1.0, 1.0], [1.0, 1.0], 2)
    assert_allclose(es.ridge_dual_point(1.0, spec, noise, 2), 0.25, rtol=1e-15)
    assert es.ridge_dual_point(math.inf, spec, noise, 2) == 0.0
    spec0, noise0 = spectral([1.0, 1.0], [0.0, 0.0], 2)
    assert es.ridge_dual_point(0.7, spec0, noise0, 2) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_residual_and_norm_monotone_in_lambda(seed):
    rng = np.random.default_rng(seed)
    spec, noise = es.spectrum_of(rng.normal(size=(6, 4)), rng.normal(size=6))
    lams = np.concatenate([[0.0], np.logspace(-4, 4, 60)])
    r = [es.residual_ratio(l, spec, noise, 6, 1.0) for l in lams]
    b = [es.ridge_dual_point(l, spec, noise, 4) for l in lams]
    assert np.all(np.diff(r) >= -1e-15)
    assert np.all(np.diff(b) <= 1e-15)


# --- solver ----------------------------------------------------------------------


def test_solve_zero_noise_is_interior():
    spec, noise = spectral([1.0, 0.5], [0.0, 0.0], 3)
    for tau in (0.0, 0.4, 1.0):
        res = es.solve_spectral(spec, noise, 2, 3, 1.0, tau)
        assert res.status == "interior_zero" and res.excess_lin_loss == 0.0


def test_solve_loose_tau_is_interior():
    spec, noise = spectral([1.0, 1.0], [0.5, 0.5], 2)
    res = es.solve_spectral(spec, noise, 2, 2, 1.0, 0.25)  # ||xi||^2 / n = 0.25
    assert res.status == "interior_zero"
    assert res.achieved_train_ratio <= 0.25


def test_solve_hand_kkt_example():
    spec, noise = spectral([1.0, 1.0], [1.0, 1.0], 2)
    res = es.solve_spectral(spec, noise, 2, 2, 1.0, 0.25)
    assert res.status == "constraint_active"
    assert_allclose(res.lambda_star, 1.0, rtol=1e-10)
    assert_allclose(res.excess_lin_loss, 0.25, rtol=1e-10)


def test_solve_infeasible_example():
    spec, noise = spectral([2.0, 0.0], [0.0, 1.0], 1)
    res = es.solve_spectral(spec, noise, 2, 1, 1.0, 0.1)
    assert res.status == "infeasible"
    assert res.excess_lin_loss == math.inf
    assert res.achieved_train_ratio == 0.5


def test_oracle_on_hand_example():
    # G = diag(1, 1) with p = 2: W = sqrt(2) I, xi = (1, 1)
    inst = es.ProblemInstance.from_arrays(math.sqrt(2.0) * np.eye(2), [1.0, 1.0])
    assert_allclose(es.brute_force_oracle(inst, 0.25), 0.25, atol=1e-4)
    assert_allclose(es.solve_min_excess(inst, 0.25).excess_lin_loss, 0.25, rtol=1e-10)


def test_oracle_zero_noise_and_infeasible():
    inst = es.ProblemInstance.from_arrays([[1.0], [2.0]], [0.0, 0.0])
    assert es.brute_force_oracle(inst, 0.3) == 0.0
    inst = es.ProblemInstance.from_arrays([[math.sqrt(2.0)], [0.0]], [0.0, 1.0])
    assert es.brute_force_oracle(inst, 0.1) == math.inf
    with pytest.raises(DomainError):
        es.brute_force_oracle(es.ProblemInstance.from_arrays(np.eye(4), np.ones(4)), 0.5)


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("tau", [0.0, 0.1, 0.5, 0.9])
def test_solver_matches_oracle(seed, tau):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    got = es.solve_min_excess(inst, tau).excess_lin_loss
    ref = es.brute_force_oracle(inst, tau)
    if math.isinf(ref):
        assert math.isinf(got)
    else:
        assert abs(got - ref) <= 1e-4 * (1 + ref)


@pytest.mark.parametrize("seed", range(10))
def test_kkt_consistency(seed):
    rng = np.random.default_rng(100 + seed)
    inst = random_instance(rng, 30, 60)
    W, xi = es.whiten(inst)
    spec, noise = es.spectrum_of(W, xi)
    for tau in (0.0, 0.2, 0.6):
        res = es.solve_spectral(spec, noise, 30, 60, 1.0, tau)
        if res.status != "constraint_active":
            continue
        assert abs(es.residual_ratio(res.lambda_star, spec, noise, 30, 1.0) - tau) <= 1e-10
        assert res.excess_lin_loss == es.ridge_dual_point(res.lambda_star, spec, noise, 60)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(2, 12))
def test_loss_nonincreasing_in_tau(seed, n, p):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, p)
    losses = [es.solve_min_excess(inst, t).excess_lin_loss for t in np.linspace(0, 1, 21)]
    for a, b in zip(losses, losses[1:]):
        assert b <= a or (math.isinf(a) and math.isinf(b)) or b <= a * (1 + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_whitening_invariance(seed):
    rng = np.random.default_rng(200 + seed)
    inst = random_instance(rng, 8, 5)
    T = rng.normal(size=(5, 5)) + 3 * np.eye(5)
    moved = es.ProblemInstance(
        8, 5, 1.0, inst.features @ T, T.T @ inst.covariance @ T,
        inst.targets, np.linalg.solve(T, inst.beta_star),
    )
    for tau in (0.3, 0.7):
        a = es.solve_min_excess(inst, tau).excess_lin_loss
        b = es.solve_min_excess(moved, tau).excess_lin_loss
        assert_allclose(b, a, rtol=1e-8, atol=1e-12)


def test_eigen_fixed_point_and_deterministic_gap():
    ev = np.array([3.0, 1.0, 0.2, 0.05])
    lam = es.eigen_fixed_point(ev, 0.4)
    assert_allclose(np.mean((lam / (ev + lam)) ** 2), 0.4, atol=1e-12)
    lhs, rhs = es.deterministic_gap(ev, lam)
    assert lhs >= rhs
    with pytest.raises(DomainError):
        es.eigen_fixed_point(np.array([1.0, 0.0]), 0.2)


# --- noise quadratic ----------------------------------------------------------------


def test_noise_quadratic_identity():
    mean, trace = es.noise_quadratic_check(np.eye(10), 1.0, 100_000, seed=3)
    assert trace == 10.0
    # var of a chi^2_10 is 20
    assert abs(mean - trace) <= 3 * math.sqrt(20 / 100_000)


def test_noise_quadratic_zero_and_trace():
    assert es.noise_quadratic_check(np.zeros((3, 3)), 1.0, 100, seed=0)[0] == 0.0
    assert es.noise_quadratic_check(np.diag([1.0, 2.0, 3.0]), 2.0, 10, seed=0)[1] == 12.0
