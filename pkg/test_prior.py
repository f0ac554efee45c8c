"""
Tests for the scalar Gaussian channel: denoiser, mmse, mutual information, priors.
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad as integrate

from src.theory.prior import (
    AtomPrior,
    GaussianPrior,
    PriorSpec,
    Quadrature,
    denoise,
    f_stationary,
    f_stationary_prime,
    log_cpi,
    mmse,
    mmse_prime,
    mutual_info,
    prior_from_spec,
    three_point,
)
from src.utils.errors import DomainError


def test_rademacher_denoiser_is_tanh(prior):
    ys = np.linspace(-3, 3, 13)
    f, f_prime = denoise(prior, ys, 1.7)
    assert np.allclose(f, np.tanh(1.7 * ys), atol=1e-14)
    assert np.allclose(f_prime, 1.7 * (1 - np.tanh(1.7 * ys) ** 2), atol=1e-13)


def test_denoiser_scalar_input_returns_floats(prior):
    f, f_prime = denoise(prior, 0.3, 2.0)
    assert isinstance(f, float) and isinstance(f_prime, float)


@pytest.mark.parametrize("gamma", np.linspace(0.2, 3.0, 10))
def test_denoiser_derivative_matches_finite_difference(gamma):
    prior = three_point(0.4)
    h = 1e-5
    ys = np.linspace(-2.0, 2.0, 10)
    numeric = (denoise(prior, ys + h, gamma)[0] - denoise(prior, ys - h, gamma)[0]) / (2 * h)
    _, f_prime = denoise(prior, ys, gamma)
    assert f_prime == pytest.approx(numeric, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("make_prior", [lambda: three_point(0.4), lambda: three_point(0.8),
                                        lambda: AtomPrior(atoms=[(-1.0, 0.5), (1.0, 0.5)])])
def test_denoiser_derivative_is_lipschitz_in_gamma(make_prior):
    prior = make_prior()
    ys = np.linspace(-4.0, 4.0, 81)
    for gamma in (0.1, 0.5, 1.0, 3.0, 10.0):
        _, f_prime = denoise(prior, ys, gamma)
        assert np.max(np.abs(f_prime)) <= prior.c_bound * gamma * (1 + 1e-12)


def test_denoiser_stable_for_large_inputs(prior):
    f, f_prime = denoise(prior, np.array([-1e6, 1e6]), 50.0)
    assert np.all(np.isfinite(f)) and np.allclose(f, [-1.0, 1.0])
    assert np.allclose(f_prime, 0.0)


def test_gamma_must_be_positive(prior):
    with pytest.raises(DomainError):
        denoise(prior, 0.3, 0.0)
    with pytest.raises(DomainError):
        mmse(prior, -1.0)


def test_mmse_monotone_decreasing_from_rho(prior):
    gammas = np.linspace(0.05, 5.0, 40)
    values = np.array([mmse(prior, g) for g in gammas])
    assert np.all(np.diff(values) < 0)
    assert values[0] < prior.rho_star
    assert mmse(prior, 1e-6) == pytest.approx(prior.rho_star, rel=1e-5)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_mmse_prime_matches_finite_difference(prior, gamma):
    h = 1e-4
    numeric = (mmse(prior, gamma + h) - mmse(prior, gamma - h)) / (2 * h)
    assert mmse_prime(prior, gamma) == pytest.approx(numeric, abs=1e-6)


def test_mmse_prime_stable_under_doubled_order(prior):
    doubled = Quadrature.gauss_hermite(122)
    for gamma in (0.5, 1.0, 2.0):
        assert mmse_prime(prior, gamma, doubled) == pytest.approx(mmse_prime(prior, gamma), abs=1e-10)

    # -E[Var^2] with Var = 1 - tanh(1 + Z)^2 for the +-1 prior at gamma = 1
    def integrand(z):
        return (1.0 - math.tanh(1.0 + z) ** 2) ** 2 * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    expected, _ = integrate(integrand, -math.inf, math.inf, epsabs=1e-13)
    assert mmse_prime(prior, 1.0) == pytest.approx(-expected, abs=1e-10)


def test_mmse_vanishes_at_high_snr(prior):
    for p in (prior, three_point(0.4)):
        assert mmse(p, 40.0) < mmse(p, 10.0) < mmse(p, 1.0)
        assert mmse(p, 40.0) < 1e-3


def test_i_mmse_relation(prior):
    lo, hi = 0.1, 2.0
    integral, _ = integrate(lambda g: mmse(prior, g), lo, hi, epsabs=1e-12)
    assert mutual_info(prior, hi) - mutual_info(prior, lo) == pytest.approx(0.5 * integral, abs=1e-5)


@pytest.mark.parametrize("hi", [0.25, 1.0, 2.5, 5.0])
def test_i_mmse_relation_from_zero(prior, hi):
    # quad never evaluates the endpoint, where mmse is undefined
    integral, _ = integrate(lambda g: mmse(prior, g), 0.0, hi, epsabs=1e-12, limit=200)
    assert mutual_info(prior, hi) == pytest.approx(0.5 * integral, abs=1e-5)


def test_mutual_info_limits(prior):
    assert mutual_info(prior, 0.0) == 0.0
    assert 0 < mutual_info(prior, 1.0) < math.log(2)
    assert mutual_info(prior, 40.0) == pytest.approx(math.log(2), abs=1e-3)


def test_log_cpi_rademacher_closed_form(prior):
    a, b = -0.7, np.array([-2.0, 0.0, 1.5])
    assert np.allclose(log_cpi(prior, a, b), a + np.log(np.cosh(b)), atol=1e-13)


def test_log_cpi_slope_in_b_is_the_denoiser():
    prior = three_point(0.4)
    h = 1e-6
    for gamma in (0.5, 2.0):
        for y in (-1.5, 0.2, 1.1):
            a, b = -0.5 * gamma, gamma * y
            slope = (log_cpi(prior, a, b + h) - log_cpi(prior, a, b - h)) / (2 * h)
            assert slope == pytest.approx(denoise(prior, y, gamma)[0], abs=1e-8)


def test_gaussian_prior_closed_forms():
    g = GaussianPrior(rho_star=2.0)
    assert mmse(g, 1.5) == pytest.approx(2.0 / 4.0)
    assert mmse_prime(g, 1.5) == pytest.approx(-(0.5 ** 2))
    assert mutual_info(g, 1.5) == pytest.approx(0.5 * math.log(4.0))
    f, f_prime = denoise(g, 2.0, 1.5)
    assert f == pytest.approx(2.0 * 0.75) and f_prime == pytest.approx(0.75)


def test_gaussian_prior_matches_dense_quadrature_mmse():
    rho = 1.3
    quad = Quadrature.gauss_hermite(60)
    # a fine symmetric grid approximating N(0, rho)
    nodes = math.sqrt(rho) * quad.nodes
    approx = AtomPrior(atoms=list(zip(nodes.tolist(), quad.weights.tolist())))
    assert mmse(approx, 0.8) == pytest.approx(mmse(GaussianPrior(rho_star=rho), 0.8), rel=1e-6)


def test_atom_prior_is_normalized_and_centered():
    prior = AtomPrior(atoms=[(2.0, 1.0), (4.0, 1.0)])
    assert np.allclose(prior.values, [-1.0, 1.0])
    assert np.allclose(prior.weights, [0.5, 0.5])
    assert prior.rho_star == pytest.approx(1.0)
    assert prior.c_bound == pytest.approx(1.0)


def test_single_atom_prior_rejected():
    with pytest.raises(ValidationError):
        AtomPrior(atoms=[(1.0, 1.0)])
    with pytest.raises(ValidationError):
        AtomPrior(atoms=[(1.0, 0.5), (1.0, 0.5)])


def test_three_point_has_unit_variance():
    prior = three_point(0.6)
    assert prior.size == 3
    assert prior.rho_star == pytest.approx(1.0)


def test_prior_spec_validation():
    assert isinstance(prior_from_spec(PriorSpec(kind="gaussian", rho_star=2.0)), GaussianPrior)
    with pytest.raises(ValidationError):
        PriorSpec(kind="laplace")
    with pytest.raises(ValidationError):
        PriorSpec(kind="three_point")
    with pytest.raises(ValidationError):
        PriorSpec(kind="rademacher", scale=2.0)


def test_stationary_nonlinearity_spot_value(prior, fp):
    eta, gamma = fp.eta_star, fp.gamma_star
    gap = eta - gamma
    expected = (eta / gap) * math.tanh(gamma * 1.3) - (gamma / gap) * 0.3 - eta / gap
    assert f_stationary(prior, 0.3, 1.0, fp) == pytest.approx(expected, abs=1e-12)


def test_stationary_nonlinearity_derivative(prior, fp):
    h = 1e-6
    for p, beta in ((0.3, 1.0), (-0.8, -1.0), (1.4, 1.0)):
        numeric = (f_stationary(prior, p + h, beta, fp) - f_stationary(prior, p - h, beta, fp)) / (2 * h)
        assert f_stationary_prime(prior, p, beta, fp) == pytest.approx(numeric, abs=1e-6)
