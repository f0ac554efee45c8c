"""
Tests for VAMP on sampled instances: state-evolution tracking, the stationary form,
Gram-block limits and the TAP residual.
"""
import numpy as np
import pytest

import src.ml.vamp as vamp
from src.data.instance import build_instance, sample_instance
from src.ml.vamp import (
    VampInit,
    empirical_overlaps,
    predicted_overlaps,
    run_stationary_vamp,
    run_vamp,
    stationary_start,
    tap_residual,
)
from src.theory.overlap import delta_table
from src.theory.prior import denoise
from src.theory.replica import StateEvolution, state_evolution
from src.utils.errors import DivergenceError, DomainError


def _mean_relative_errors(prior, law, n, m, seeds, T):
    """Relative error of the seed-averaged mse against the state-evolution prediction."""
    se = state_evolution(prior, law, None, T)
    mse1 = np.zeros(T)
    mse2 = np.zeros(T)
    for seed in seeds:
        run = run_vamp(sample_instance(law, prior, n, m, seed), prior, T=T, se=se, seed=seed)
        mse1 += np.array(run.mse1) / len(seeds)
        mse2 += np.array(run.mse2) / len(seeds)
    return np.abs(mse1 - se.eta1_inv) / se.eta1_inv, np.abs(mse2 - se.eta2_inv) / se.eta2_inv, se


def test_vamp_tracks_state_evolution(prior, law):
    err1, err2, se = _mean_relative_errors(prior, law, 1500, 1800, range(8), 6)
    assert err1.max() <= 0.06
    assert err2.max() <= 0.06
    assert np.all(np.diff(se.eta2) >= -1e-12)


@pytest.mark.slow
def test_vamp_tracks_state_evolution_at_scale(prior, law):
    err1, err2, _ = _mean_relative_errors(prior, law, 4000, 4800, range(10), 10)
    assert err1.max() <= 0.05
    assert err2.max() <= 0.05


def test_records_layout(prior, law, fp):
    inst = sample_instance(law, prior, 200, 240, seed=1)
    run = run_vamp(inst, prior, law, T=4, gamma_star=fp.gamma_star, seed=1)
    rows = run.records(seed=1)
    assert [r["t"] for r in rows] == [1, 2, 3, 4]
    assert set(rows[0]) == {"seed", "t", "mse1", "mse2", "eta1_inv_pred", "eta2_inv_pred", "tap_residual"}
    assert all(np.isfinite(r["tap_residual"]) for r in rows)


def test_stationary_form_matches_standard_form(prior, law, fp):
    n, T, seed = 500, 6, 21
    inst = sample_instance(law, prior, n, 600, seed)
    stationary = run_stationary_vamp(inst, prior, fp, seed, T)

    p0, init = stationary_start(inst, prior, fp, seed)
    assert np.array_equal(p0, stationary.p0)
    assert init.gamma2_1 == pytest.approx(fp.eta_star - fp.gamma_star)
    standard = run_vamp(inst, prior, T=T, init=init, se=StateEvolution.constant(fp, T), keep_history=True)

    beta = inst.beta_star[:, None]
    x_standard = standard.history["r2"] - beta
    y_standard = standard.history["r1"] - stationary.e[:, None] - beta
    assert np.abs(stationary.X - x_standard).max() <= 1e-10 * np.abs(stationary.X).max()
    assert np.abs(stationary.Y - y_standard).max() <= 1e-10 * np.abs(stationary.Y).max()
    assert np.allclose(stationary.S, inst.O @ stationary.X)


def test_stationary_iterates_have_delta_star_norm(prior, law, fp):
    inst = sample_instance(law, prior, 1500, 1800, seed=8)
    run = run_stationary_vamp(inst, prior, fp, 8, 4)
    norms = np.sum(run.X ** 2, axis=0) / inst.n
    assert np.allclose(norms, fp.delta_star, rtol=0.1)


@pytest.mark.slow
def test_gram_blocks_approach_limits(prior, law, fp):
    T = 4
    inst = sample_instance(law, prior, 4000, 4800, seed=13)
    empirical = empirical_overlaps(run_stationary_vamp(inst, prior, fp, 13, T))
    predicted = predicted_overlaps(fp, delta_table(prior, fp, T), T)
    assert empirical.ete == pytest.approx(predicted.ete, rel=0.05)
    assert np.allclose(empirical.XtX, predicted.XtX, rtol=0.05)
    assert np.allclose(empirical.YtY, predicted.YtY, rtol=0.05)
    scale = np.sqrt(fp.delta_star * fp.b_star)
    assert np.abs(empirical.Xte).max() <= 0.05 * scale
    assert np.abs(empirical.XtY).max() <= 0.05 * fp.delta_star * np.sqrt(fp.kappa_star)


def test_tap_residual_at_zero_mean(prior, law, fp):
    inst = sample_instance(law, prior, 80, 96, seed=3)
    expected_f, _ = denoise(prior, inst.apply_at(inst.y) / fp.gamma_star, fp.gamma_star)
    expected = float(np.sum(expected_f ** 2) / inst.n)
    assert tap_residual(inst, prior, fp.gamma_star, np.zeros(inst.n)) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        tap_residual(inst, prior, 0.0, np.zeros(inst.n))
    with pytest.raises(DomainError):
        tap_residual(inst, prior, fp.gamma_star, np.zeros(inst.n + 1))


def test_divergence_guard_reports_seed(prior, law, monkeypatch):
    monkeypatch.setattr(vamp, "DIVERGENCE_FACTOR", 1e-9)
    inst = sample_instance(law, prior, 50, 60, seed=17)
    with pytest.raises(DivergenceError) as info:
        run_vamp(inst, prior, law, T=3, seed=17)
    assert info.value.seed == 17
    assert info.value.iteration == 1


def test_run_vamp_argument_checks(prior, law):
    inst = sample_instance(law, prior, 20, 24, seed=0)
    with pytest.raises(DomainError):
        run_vamp(inst, prior, law, T=0)
    with pytest.raises(DomainError):
        run_vamp(inst, prior, law, T=2, init=VampInit(r2_1=np.zeros(5), gamma2_1=1.0))
    with pytest.raises(DomainError):
        run_vamp(inst, prior, law, T=2, init=VampInit(r2_1=np.zeros(20), gamma2_1=0.0))
    with pytest.raises(DomainError):
        run_vamp(inst, prior, None, T=2)


def _fixed_schedule(gamma2, gamma1=1.0):
    """One-step schedule with eta2 = gamma1 + gamma2."""
    return StateEvolution(gamma1=[gamma1], eta1=[2.0 * gamma1], gamma2=[gamma2], eta2=[gamma1 + gamma2],
                          init_mode="custom")


def test_linear_step_with_huge_prior_precision_returns_message(prior, law):
    inst = sample_instance(law, prior, 200, 240, seed=4)
    init = VampInit(r2_1=inst.beta_star.copy(), gamma2_1=1e8)
    run = run_vamp(inst, prior, T=1, init=init, se=_fixed_schedule(1e8))
    assert np.abs(run.beta_hat2 - inst.beta_star).max() <= 1e-6
    assert run.mse2[0] <= 1e-12


def test_linear_step_with_vanishing_prior_precision_is_least_squares(prior, law):
    sampled = sample_instance(law, prior, 150, 180, seed=5)
    lstsq = np.linalg.lstsq(sampled.design(), sampled.y, rcond=None)[0]
    run = run_vamp(sampled, prior, T=1, init=VampInit(r2_1=np.zeros(150), gamma2_1=1e-10),
                   se=_fixed_schedule(1e-10))
    assert np.allclose(run.beta_hat2, lstsq, atol=1e-8)

    noiseless = build_instance(sampled.d_diag, sampled.O, sampled.beta_star, np.zeros(sampled.m))
    run = run_vamp(noiseless, prior, T=1, init=VampInit(r2_1=np.zeros(150), gamma2_1=1e-10),
                   se=_fixed_schedule(1e-10))
    assert np.allclose(run.beta_hat2, noiseless.beta_star, atol=1e-8)


def test_vamp_estimate_solves_tap_at_large_t(prior, law, fp):
    inst = sample_instance(law, prior, 1000, 1200, seed=9)
    run = run_vamp(inst, prior, law, T=15, gamma_star=fp.gamma_star, seed=9)
    assert run.tap_residual[-1] <= 1e-3
    assert run.tap_residual[-1] < 1e-2 * run.tap_residual[0]
