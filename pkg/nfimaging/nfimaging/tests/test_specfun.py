import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from nfimaging.exceptions import DomainError, SpecialFunctionOverflow
from nfimaging.specfun import (
    QuadratureGrid,
    gauss_legendre,
    legendre_p,
    legendre_table,
    sph_hankel2,
    sph_hankel2_table,
    sphere_quadrature,
)


def test_legendre_table_matches_scipy():
    x = np.linspace(-1.0, 1.0, 101)
    table = legendre_table(12, x)
    for l in range(13):
        assert_allclose(table[l], eval_legendre(l, x), rtol=1e-12, atol=1e-12)


def test_legendre_p_low_orders():
    assert legendre_p(0, 0.3) == 1.0
    assert legendre_p(1, 0.3) == pytest.approx(0.3)
    assert legendre_p(2, 0.5) == pytest.approx(-0.125)
    assert legendre_p(5, 1.0) == pytest.approx(1.0)
    assert legendre_p(5, -1.0) == pytest.approx(-1.0)


def test_legendre_rejects_argument_outside_interval():
    with pytest.raises(DomainError):
        legendre_table(3, [0.2, 1.5])
    # DomainError is also a ValueError for callers that only know numpy conventions
    with pytest.raises(ValueError):
        legendre_p(2, -1.01)


@pytest.mark.parametrize("x", [0.5, 1.0, 5.0, 30.0, 100.0])
def test_hankel_matches_bessel_combination(x):
    table = sph_hankel2_table(20, x)
    for l in range(21):
        expected = spherical_jn(l, x) - 1j * spherical_yn(l, x)
        assert abs(table[l] - expected) <= 1e-9 * abs(expected)


def _bessel_downward(L, x, start=80):
    """j_0 .. j_L by Miller's downward recurrence, normalized to sin(x) / x."""
    values = np.zeros(start + 2)
    values[start] = 1e-30
    for l in range(start, 0, -1):
        values[l - 1] = (2 * l + 1) / x * values[l] - values[l + 1]
    return values[: L + 1] * (np.sin(x) / x) / values[0]


@pytest.mark.parametrize("x", [1.0, 5.0, 20.0])
def test_hankel_real_part_is_the_regular_bessel_function(x):
    real = sph_hankel2_table(30, x).real
    expected = _bessel_downward(30, x)
    for l in range(31):
        assert abs(real[l] - expected[l]) <= 1e-9 * abs(expected[l]), l
    assert_allclose(real, spherical_jn(np.arange(31), x), rtol=1e-10)


def test_hankel_closed_forms():
    x = 2.7
    assert sph_hankel2(0, x) == pytest.approx(1j * np.exp(-1j * x) / x, rel=1e-14)
    assert sph_hankel2(1, x) == pytest.approx((-1.0 / x + 1j / x**2) * np.exp(-1j * x), rel=1e-14)


def test_hankel_vectorized_argument():
    x = np.array([0.8, 3.0, 12.0])
    values = sph_hankel2(4, x)
    assert values.shape == (3,)
    assert_allclose(values, spherical_jn(4, x) - 1j * spherical_yn(4, x), rtol=1e-10)


def test_hankel_overflow_is_reported():
    with pytest.raises(SpecialFunctionOverflow):
        sph_hankel2_table(400, 0.01)


@pytest.mark.parametrize("x", [0.0, -1.0, np.inf])
def test_hankel_domain(x):
    with pytest.raises(DomainError):
        sph_hankel2(2, x)


def test_gauss_legendre_integrates_polynomials():
    nodes, weights = gauss_legendre(6)
    # exact up to degree 11
    assert weights.sum() == pytest.approx(2.0)
    assert np.dot(weights, nodes**10) == pytest.approx(2.0 / 11.0)
    with pytest.raises(DomainError):
        gauss_legendre(0)


def test_sphere_quadrature_layout():
    grid = sphere_quadrature(7)
    assert grid.size == 8 * 16
    assert (grid.n_theta, grid.n_phi, grid.band_limit) == (8, 16, 7)
    assert_allclose(np.linalg.norm(grid.directions, axis=1), 1.0, atol=1e-14)
    assert grid.weights.sum() == pytest.approx(4.0 * np.pi, rel=1e-13)
    assert np.all(grid.weights > 0)
    # cached per band limit
    assert sphere_quadrature(7) is grid


def test_sphere_quadrature_moments():
    grid = sphere_quadrature(4)
    x, y, z = grid.directions.T
    assert grid.integrate(z**2) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-12)
    assert grid.integrate(x**2 * y**2) == pytest.approx(4.0 * np.pi / 15.0, rel=1e-12)
    assert grid.integrate(x * y**3 * z) == pytest.approx(0.0, abs=1e-13)


@pytest.mark.parametrize("L", [12, 16])
def test_sphere_quadrature_plane_wave_integral(L):
    # integral of exp(-j k^.a) over the sphere is 4 pi sin|a| / |a|
    a = (L / 2.0) * np.array([0.36, -0.48, 0.8])
    grid = sphere_quadrature(L)
    value = grid.integrate(np.exp(-1j * grid.directions @ a))
    norm = np.linalg.norm(a)
    assert abs(value - 4.0 * np.pi * np.sin(norm) / norm) < 1e-8


def test_sphere_quadrature_rejects_zero_order():
    with pytest.raises(DomainError):
        sphere_quadrature(0)


def test_quadrature_grid_validation():
    grid = sphere_quadrature(3)
    with pytest.raises(ValueError):
        QuadratureGrid(directions=2.0 * grid.directions, weights=grid.weights, band_limit=3, n_theta=4, n_phi=8)
    with pytest.raises(ValueError):
        QuadratureGrid(directions=grid.directions, weights=0.5 * grid.weights, band_limit=3, n_theta=4, n_phi=8)


def test_legendre_recurrence_stays_bounded_to_high_degree():
    x = np.linspace(-1.0, 1.0, 2001)
    table = legendre_table(200, x)
    assert np.max(np.abs(table)) <= 1.0 + 1e-12
    assert_allclose(table[200], eval_legendre(200, x), atol=1e-10)


def test_sphere_quadrature_annihilates_y32():
    # Y_3^2 = (1/4) sqrt(105 / 2pi) sin^2(theta) cos(theta) exp(2j phi) = c (x + jy)^2 z
    grid = sphere_quadrature(6)
    x, y, z = grid.directions.T
    y32 = 0.25 * np.sqrt(105.0 / (2.0 * np.pi)) * (x + 1j * y) ** 2 * z
    assert abs(grid.integrate(y32)) < 1e-9
    # and it is normalized on the same grid
    assert grid.integrate(np.abs(y32) ** 2) == pytest.approx(1.0, rel=1e-12)
