import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from btsmodes.bayes_space import (GridDensity, Interval, clr, clr_from_log, clr_inverse, inner_product, norm,
                                  perturb, power, uniform)
from btsmodes.errors import GridMismatch, NonPositiveDensity

from conftest import random_spline

M = 101
finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
clr_arrays = arrays(np.float64, M, elements=finite)
scalars = st.floats(-3, 3, allow_nan=False)


def grid_density(values, interval=Interval(0.0, 1.0)):
    return GridDensity(interval, values)


# -- clr / clr_inverse examples ----------------------------------------------

def test_clr_of_uniform_is_zero(unit):
    g = clr(np.ones(M), unit)
    assert np.all(g.clr_values == 0)


def test_clr_of_exponential(unit):
    x = unit.grid(M)
    g = clr(np.exp(x), unit)
    np.testing.assert_allclose(g.clr_values, x - 0.5, atol=1e-12)


def test_clr_inverse_of_zero_is_uniform(unit):
    np.testing.assert_allclose(clr_inverse(uniform(unit, M)), 1.0, atol=1e-14)


def test_clr_inverse_of_affine(unit):
    x = unit.grid(2001)
    dens = clr_inverse(grid_density(x - 0.5))
    # trapezoid normalisation: relative error O(spacing^2)
    np.testing.assert_allclose(dens, np.exp(x) / (np.e - 1), rtol=1e-6)


def test_round_trip_random_spline_density(basis):
    spline = random_spline(basis, 3)
    g = spline.to_grid(1001)
    dens = spline.pdf(g.grid)
    np.testing.assert_allclose(clr_inverse(clr(dens, g.interval)), clr_inverse(g), rtol=1e-10)
    np.testing.assert_allclose(clr(clr_inverse(g), g.interval).clr_values, g.clr_values, atol=1e-10)


def test_errors(unit):
    with pytest.raises(NonPositiveDensity):
        clr(np.array([1.0, 0.0, 1.0]), unit)
    with pytest.raises(NonPositiveDensity):
        clr(np.array([1.0, np.nan, 1.0]), unit)
    with pytest.raises(GridMismatch):
        perturb(uniform(unit, 5), uniform(unit, 7))
    with pytest.raises(GridMismatch):
        inner_product(uniform(unit, 5), uniform(Interval(0.0, 2.0), 5))
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)


# -- properties -----------------------------------------------------------------

@given(clr_arrays)
def test_zero_integral_invariant(values):
    g = grid_density(values)
    assert abs(g.weights @ g.clr_values) <= 1e-8


@given(clr_arrays)
def test_round_trips(values):
    g = grid_density(values)
    dens = clr_inverse(g)
    assert abs(g.weights @ dens - 1.0) <= 1e-12
    np.testing.assert_allclose(clr(dens, g.interval).clr_values, g.clr_values, atol=1e-10)


@given(clr_arrays)
def test_inverse_of_clr_after_renormalisation(values):
    dens = np.exp(values)
    g = clr(dens, Interval(0.0, 1.0))
    expected = dens / (g.weights @ dens)
    np.testing.assert_allclose(clr_inverse(g), expected, rtol=1e-10)


@given(clr_arrays, clr_arrays, clr_arrays, scalars, scalars)
@settings(max_examples=50)
def test_vector_space_laws(a, b, c, s, t):
    f, g, h = grid_density(a), grid_density(b), grid_density(c)
    u = uniform(f.interval, M)

    def close(p, q):
        np.testing.assert_allclose(p.clr_values, q.clr_values, rtol=0, atol=1e-12)

    close(perturb(perturb(f, g), h), perturb(f, perturb(g, h)))
    close(perturb(f, g), perturb(g, f))
    close(perturb(f, u), f)
    close(perturb(f, power(-1.0, f)), u)
    close(power(0.0, f), u)
    close(power(1.0, f), f)
    close(power(s, perturb(f, g)), perturb(power(s, f), power(s, g)))
    close(power(s + t, f), perturb(power(s, f), power(t, f)))
    close(power(s, power(t, f)), power(s * t, f))


@given(clr_arrays, clr_arrays, clr_arrays, scalars)
@settings(max_examples=50)
def test_inner_product_symmetric_bilinear(a, b, c, s):
    f, g, h = grid_density(a), grid_density(b), grid_density(c)
    scale = 1 + abs(inner_product(f, h)) + abs(inner_product(g, h))
    assert inner_product(f, g) == pytest.approx(inner_product(g, f), abs=1e-10)
    lhs = inner_product(perturb(power(s, f), g), h)
    rhs = s * inner_product(f, h) + inner_product(g, h)
    assert abs(lhs - rhs) <= 1e-10 * scale


@given(clr_arrays)
def test_uniform_is_orthogonal_and_norm_positive(values):
    f = grid_density(values)
    assert inner_product(f, uniform(f.interval, M)) == 0.0
    assert norm(f) >= 0
    if np.ptp(values) > 1e-6:
        assert norm(f) > 0
    assert norm(uniform(f.interval, M)) == 0.0


def test_inner_product_double_integral_form(basis):
    """<f, g> = 1/(2(b-a)) ∫∫ log(f(x)/f(y)) log(g(x)/g(y)) dx dy, on a coarse grid."""
    f, g = random_spline(basis, 11, 0.05), random_spline(basis, 12, 0.05)
    iv = basis.interval
    m = 201
    x = iv.grid(m)
    w = np.full(m, 2.0)  # composite Simpson weights
    w[1::2] = 4.0
    w[[0, -1]] = 1.0
    w *= iv.length / (m - 1) / 3
    lf, lg = f.log_pdf(x), g.log_pdf(x)
    df = lf[:, None] - lf[None, :]
    dg = lg[:, None] - lg[None, :]
    double = w @ (df * dg) @ w / (2 * iv.length)
    fine = 20001
    clr_form = inner_product(f.to_grid(fine), g.to_grid(fine))
    assert abs(double - clr_form) <= 1e-4


def test_clr_from_log_matches_clr(unit):
    x = unit.grid(M)
    np.testing.assert_allclose(clr_from_log(-x**2, unit).clr_values, clr(np.exp(-x**2), unit).clr_values,
                               atol=1e-14)
