"""
Tests for the spectral law and its Cauchy / R transforms.
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import trapezoid

from src.theory.spectrum import (
    LawSpec,
    SpectralLaw,
    cauchy_g,
    cauchy_g_inverse,
    cauchy_g_prime,
    free_cumulants,
    law_from_spec,
    point_mass,
    r_integral,
    r_series,
    r_transform,
    r_transform_prime,
    spectral_moments,
    two_point,
    uniform_grid,
)
from src.utils.errors import DomainError

# frozen once for the small-window expansion bounds
EXPANSION_CONSTANT = 10.0


def test_law_summary(law):
    assert law.d_star == pytest.approx(1.0)
    assert law.d_minus == pytest.approx(0.95)
    assert law.d_plus == pytest.approx(1.05)
    assert law.kappa2 == pytest.approx(0.0025)
    assert law.eps == pytest.approx(0.05)
    assert not law.degenerate


def test_point_mass_is_degenerate():
    law = point_mass(2.0)
    assert law.degenerate
    assert law.kappa2 == 0.0
    assert cauchy_g_inverse(law, 0.25) == pytest.approx(4.0 - 2.0)
    assert r_transform(law, 0.7) == -2.0
    assert r_transform_prime(law, 0.7) == 0.0
    assert r_integral(law, 0.5) == pytest.approx(-1.0)


@pytest.mark.parametrize("y", [0.05, 0.3, 0.9, 1.5, 5.0, 40.0])
def test_cauchy_inverse_round_trip(law, y):
    z = cauchy_g_inverse(law, y)
    assert z > -law.d_minus
    assert cauchy_g(law, z) == pytest.approx(y, rel=1e-10)


def test_cauchy_g_pole_rejected(law):
    with pytest.raises(DomainError):
        cauchy_g(law, -law.d_minus)
    with pytest.raises(DomainError):
        cauchy_g_inverse(law, 0.0)


def test_cauchy_g_prime_matches_finite_difference(law):
    h = 1e-6
    for z in (0.2, 1.0, 3.0):
        numeric = (cauchy_g(law, z + h) - cauchy_g(law, z - h)) / (2 * h)
        assert cauchy_g_prime(law, z) == pytest.approx(numeric, rel=1e-7)


def test_r_transform_continuity_at_zero(law):
    assert r_transform(law, 0.0) == -law.d_star
    assert r_transform(law, 1e-8) == pytest.approx(-law.d_star + law.kappa2 * 1e-8, abs=1e-14)
    assert r_transform_prime(law, 0.0) == law.kappa2


def test_r_transform_inverts_cauchy(law):
    for z in (0.1, 0.5, 1.0, 2.0):
        zeta = r_transform(law, z) + 1.0 / z
        assert cauchy_g(law, zeta) == pytest.approx(z, rel=1e-11)


def test_r_transform_prime_matches_finite_difference(law):
    h = 1e-5
    for z in (0.1, 0.6, 1.5):
        numeric = (r_transform(law, z + h) - r_transform(law, z - h)) / (2 * h)
        assert r_transform_prime(law, z) == pytest.approx(numeric, abs=1e-8)


def test_r_integral_derivative_is_r(law):
    h = 1e-4
    for x in (0.2, 0.8):
        numeric = (r_integral(law, x + h) - r_integral(law, x - h)) / (2 * h)
        assert numeric == pytest.approx(r_transform(law, x), abs=1e-8)
    assert r_integral(law, 0.0) == 0.0


def test_r_series_matches_direct(law):
    cumulants = free_cumulants(law, 12)
    assert cumulants[0] == -law.d_star
    assert cumulants[1] == pytest.approx(law.kappa2, rel=1e-12)
    assert r_series(cumulants, 0.1) == pytest.approx(r_transform(law, 0.1), abs=1e-8)


def test_cumulant_and_moment_bounds():
    law = uniform_grid(1.0, 0.04, 7)
    cumulants = free_cumulants(law, 12)
    for k, kappa in enumerate(cumulants[1:], start=2):
        assert abs(kappa) <= (16 * law.eps) ** k
    moments = spectral_moments(law, 12)
    assert moments[0] == pytest.approx(0.0, abs=1e-15)
    for k, mu in enumerate(moments[2:], start=3):
        assert abs(mu) <= law.eps ** (k - 2) * law.kappa2 * (1 + 1e-9)


def test_symmetric_law_has_vanishing_odd_cumulants(law):
    cumulants = free_cumulants(law, 7)
    assert cumulants[2] == pytest.approx(0.0, abs=1e-15)
    assert cumulants[4] == pytest.approx(0.0, abs=1e-15)


def test_uniform_grid_atoms():
    law = uniform_grid(2.0, 0.5, 5)
    assert np.allclose(law.dsq, [1.5, 1.75, 2.0, 2.25, 2.5])
    assert np.allclose(law.weights, 0.2)
    assert uniform_grid(2.0, 0.5, 1).degenerate


def test_law_validation():
    with pytest.raises(ValidationError):
        SpectralLaw(atoms=[(-1.0, 1.0), (2.0, 1.0)])
    with pytest.raises(ValidationError):
        SpectralLaw(atoms=[(0.0, 1.0)])
    with pytest.raises(ValidationError):
        LawSpec(kind="two_point", d_star=1.0, e=1.5)
    with pytest.raises(ValidationError):
        LawSpec(kind="semicircle")


def test_law_from_spec():
    law = law_from_spec(LawSpec(kind="two_point", d_star=2.0, e=0.1))
    assert law.d_minus == pytest.approx(1.9)
    assert law_from_spec(LawSpec(kind="point_mass", d_star=3.0)).degenerate
    assert two_point(1.0, 0.0).degenerate


def _two_point_g_inverse(d_star, e, y):
    # y (zeta + d* - e)(zeta + d* + e) = zeta + d*, larger root
    s = d_star
    b = 2 * y * s - 1.0
    c = y * (s * s - e * e) - s
    return (-b + math.sqrt(b * b - 4 * y * c)) / (2 * y)


def _two_point_r_shift(e, z):
    """R(z) + d* for the law {d* +- e}, written without cancellation."""
    return 2 * e * e * z / (1.0 + np.sqrt(1.0 + 4 * e * e * z * z))


@pytest.mark.parametrize("d_star,e", [(1.0, 0.05), (1.0, 0.01), (2.0, 0.5)])
def test_cauchy_inverse_matches_quadratic_root(d_star, e):
    law = two_point(d_star, e)
    for y in (0.1, 0.5, 1.0, 3.0, 20.0):
        assert cauchy_g_inverse(law, y) == pytest.approx(_two_point_g_inverse(d_star, e, y), rel=1e-11, abs=1e-12)


def test_r_transform_at_half_matches_quadratic_root(law):
    expected = _two_point_g_inverse(1.0, 0.05, 0.5) - 2.0
    assert r_transform(law, 0.5) == pytest.approx(expected, abs=1e-12)
    assert r_transform(law, 0.5) == pytest.approx(-1.0 + _two_point_r_shift(0.05, 0.5), abs=1e-12)


def test_r_integral_matches_trapezoid(law):
    grid = np.linspace(0.0, 0.4, 40001)
    shift = trapezoid(_two_point_r_shift(0.05, grid), grid)
    assert r_integral(law, 0.4) == pytest.approx(shift - 0.4, abs=1e-9)
    coarse = np.linspace(0.0, 0.4, 401)
    direct = trapezoid([r_transform(law, float(z)) for z in coarse], coarse)
    assert r_integral(law, 0.4) == pytest.approx(direct, abs=1e-9)


@pytest.mark.parametrize("make_law", [lambda: two_point(1.0, 0.05), lambda: uniform_grid(1.5, 0.3, 7)])
def test_transforms_are_monotone(make_law):
    law = make_law()
    zs = np.linspace(-0.9 * law.d_minus, 5.0, 60)
    g = cauchy_g(law, zs)
    assert np.all(g > 0) and np.all(np.diff(g) < 0)
    rs = np.array([r_transform(law, float(z)) for z in np.linspace(0.0, 3.0, 40)])
    assert np.all(rs < 0) and np.all(np.diff(rs) > 0)


@pytest.mark.parametrize("e", [0.01, 0.05])
def test_small_window_expansion_of_r(e):
    law = two_point(1.0, e)
    for z in np.linspace(0.02, 1.0, 50):
        z = float(z)
        deviation = r_transform(law, z) + law.d_star - law.kappa2 * z
        assert abs(deviation) <= EXPANSION_CONSTANT * e * law.kappa2 * z * z
        assert abs(r_transform_prime(law, z) - law.kappa2) <= EXPANSION_CONSTANT * e ** 3
