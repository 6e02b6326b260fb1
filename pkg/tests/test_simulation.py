from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from overfit_bounds import simulation as sim
from overfit_bounds.errors import ConfigError, DomainError


def config(**kw):
    base = dict(n=20, p=40, tau_grid=(0.25,), trials=10, master_seed=1)
    base.update(kw)
    return sim.ExperimentConfig(**base)


# --- random streams ----------------------------------------------------------


def test_splitmix64_reference_outputs():
    # first two outputs of the reference generator started from state 0
    assert sim.splitmix64(0) == 0xE220A8397B1DCDAF
    assert sim.splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


def test_trial_keys_distinct():
    keys = {sim.trial_key(42, i) for i in range(1000)}
    assert len(keys) == 1000
    assert sim.trial_key(42, 0) != sim.trial_key(43, 0)


def test_box_muller_moments():
    z = sim.box_muller(sim.trial_rng(0, 0), 200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01
    assert sim.box_muller(sim.trial_rng(0, 0), (3, 5)).shape == (3, 5)


# --- config -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(trials=0),
        dict(tau_grid=(1.5,)),
        dict(tau_grid=()),
        dict(sigma=0.0),
        dict(noise_dist="student_t", student_t_dof=4.0),
        dict(noise_dist="cauchy"),
        dict(feature_dist="gaussian_covariance"),
        dict(feature_dist="uniform"),
        dict(beta_star_spec="ones"),
        dict(master_seed=-1),
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        config(**kw)


def test_covariance_specs(tmp_path):
    cov = sim.load_covariance("ar1:0.5", 3)
    assert_allclose(cov, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
    path = tmp_path / "cov.npy"
    np.save(path, np.diag([1.0, 2.0]))
    assert_array_equal(sim.load_covariance(str(path), 2), np.diag([1.0, 2.0]))
    with pytest.raises(ConfigError):
        sim.load_covariance(str(path), 3)
    with pytest.raises(ConfigError):
        sim.load_covariance("ar1:1.5", 3)
    with pytest.raises(ConfigError):
        sim.load_covariance("missing.npy", 3)


# --- sampling ---------------------------------------------------------------------


def test_iid_instance_records_identity():
    inst = sim.sample_instance(config(), 0)
    assert_array_equal(inst.covariance, np.eye(40))
    assert inst.features.shape == (20, 40)


def test_sampling_is_deterministic():
    a = sim.sample_instance(config(beta_star_spec="unit_sphere_random"), 3)
    b = sim.sample_instance(config(beta_star_spec="unit_sphere_random"), 3)
    assert_array_equal(a.features, b.features)
    assert_array_equal(a.targets, b.targets)
    assert_array_equal(a.beta_star, b.beta_star)
    c = sim.sample_instance(config(beta_star_spec="unit_sphere_random"), 4)
    assert not np.array_equal(a.features, c.features)
    assert_allclose(np.linalg.norm(a.beta_star), 1.0)


def test_trial_index_range():
    with pytest.raises(ConfigError):
        sim.sample_instance(config(trials=3), 3)


@pytest.mark.parametrize("noise", ["gaussian", "student_t", "rademacher_scaled"])
def test_noise_variance(noise):
    inst = sim.sample_instance(sim.ExperimentConfig(n=100_000, p=1, sigma=2.0, trials=1, noise_dist=noise), 0)
    eps = inst.targets  # beta_star = 0
    assert 3.9 <= eps.var() <= 4.1


def test_covariance_features():
    cfg = config(n=20_000, p=3, feature_dist="gaussian_covariance", covariance_spec="ar1:0.6", trials=1)
    inst = sim.sample_instance(cfg, 0)
    assert_allclose(inst.covariance, sim.load_covariance("ar1:0.6", 3))
    emp = inst.features.T @ inst.features / 20_000
    assert_allclose(emp, inst.covariance, atol=0.05)


# --- experiments ------------------------------------------------------------------


def test_reports_reproducible_and_thread_independent():
    cfg = config(tau_grid=(0.0, 0.25, 0.75), trials=16)
    a = sim.run_experiment(cfg)
    assert a == sim.run_experiment(cfg)
    assert a == sim.run_experiment(cfg, threads=4)


def test_report_fields():
    rep = sim.run_experiment(config(n=40, p=160, trials=20))[0]
    assert rep.gamma == 0.25
    assert rep.mc_stderr >= 0 and rep.infeasible_count == 0 and rep.error_count == 0
    assert rep.universal_bound_sqrt == pytest.approx(0.0625)
    assert rep.universal_bound_legacy <= rep.universal_bound_sqrt
    assert rep.small_tau_bound is not None
    assert not rep.bound_violated


def test_tau_one_is_interior_when_noise_is_below_floor():
    # b = 0 is feasible exactly when ||xi||^2 <= n sigma^2; otherwise a tiny loss remains
    cfg = config(n=40, p=160, tau_grid=(1.0,), trials=200, master_seed=9)
    rep = sim.run_experiment(cfg)[0]
    interior = sum(
        float(np.sum(sim.sample_instance(cfg, i).targets ** 2)) <= 40 for i in range(200)
    )
    assert 0 < interior < 200
    assert rep.mc_mean < 0.01
    assert rep.analytic_value == 0.0


def test_tau_one_loss_vanishes_with_n():
    small = sim.run_experiment(config(n=20, p=80, tau_grid=(1.0,), trials=100))[0].mc_mean
    large = sim.run_experiment(config(n=200, p=800, tau_grid=(1.0,), trials=20))[0].mc_mean
    assert large < small


def test_peak_simulation_close_to_closed_form():
    rep = sim.run_experiment(sim.ExperimentConfig(n=200, p=200, tau_grid=(0.5,), trials=200, master_seed=1))[0]
    assert abs(rep.mc_mean - 0.125) <= 0.15 * 0.125
    # square Gram matrices are full rank, so nothing is infeasible; rare near-singular draws count as errors
    assert rep.infeasible_count == 0
    assert rep.error_count <= 2


def test_infeasible_fraction_grows_with_n():
    fractions = []
    for n in (8, 40, 400):
        rep = sim.run_experiment(config(n=n, p=n // 2, tau_grid=(0.3,), trials=40, master_seed=3))[0]
        fractions.append(rep.infeasible_count / rep.trials)
        assert rep.analytic_value == math.inf
    assert fractions[-1] == 1.0
    assert fractions[0] <= fractions[-1]


def test_all_infeasible_mean_is_inf():
    rep = sim.run_experiment(config(n=400, p=200, tau_grid=(0.1,), trials=5))[0]
    assert rep.infeasible_count == 5
    assert rep.mc_mean == math.inf and rep.mc_stderr == 0.0
    assert not rep.bound_violated


def test_solver_errors_are_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(sim, "solve_spectral", boom)
    rep = sim.run_experiment(config(trials=4))[0]
    assert rep.error_count == 4


@pytest.mark.parametrize("noise", ["student_t", "rademacher_scaled"])
def test_bound_holds_for_other_noise(noise):
    rep = sim.run_experiment(config(n=40, p=160, trials=60, noise_dist=noise))[0]
    assert not rep.bound_violated


def test_bound_holds_with_correlated_features():
    cfg = config(n=30, p=90, trials=40, feature_dist="gaussian_covariance", covariance_spec="ar1:0.7",
                 beta_star_spec="unit_sphere_random")
    assert not sim.run_experiment(cfg)[0].bound_violated


def test_ks_distance_small_for_matching_law():
    ev = sim.gram_eigenvalues(200, 400, seed=5)
    assert sim.ks_distance_to_mp(ev, 0.5) < 0.05
    assert sim.ks_distance_to_mp(ev, 2.0) > 0.3


# --- figure tables ----------------------------------------------------------------


def test_fig1a_rows():
    (table,) = sim.figure_curves("fig1a", gammas=[1.0], tau_grid=[0.5, 1.0])
    assert table.name == "fig1a_gamma_1"
    assert table.rows[0][1] == pytest.approx(0.125, abs=1e-8)
    assert table.rows[1][1:] == (0.0, 0.0)


def test_fig1a_default_names_and_inf():
    tables = sim.figure_curves("fig1a")
    assert [t.name for t in tables] == [f"fig1a_gamma_{g:g}" for g in sim.DEFAULT_FIG1A_GAMMAS]
    by_name = {t.name: t for t in tables}
    assert by_name["fig1a_gamma_2"].rows[0][1] == math.inf


def test_fig1b_monotone_in_inverse_gamma():
    (table,) = sim.figure_curves("fig1b", taus=[0.25])
    values = [r[2] for r in table.rows]
    for a, b in zip(values, values[1:]):
        assert b <= a


def test_fig2_tight_at_zero():
    (table,) = sim.figure_curves("fig2", gammas=[0.5])
    tau, analytic, bound = table.rows[0]
    assert tau == 0.0
    assert_allclose([analytic, bound], [1.0, 1.0], rtol=1e-12)
    assert table.rows[-1][2] is None  # tau = 1 lies outside tau <= 1 - gamma


def test_figure_errors():
    with pytest.raises(DomainError):
        sim.figure_curves("fig3")
    with pytest.raises(DomainError):
        sim.figure_curves("fig2", gammas=[1.5])
