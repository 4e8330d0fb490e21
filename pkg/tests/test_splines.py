import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson
from scipy.stats import norm as normal

from btsmodes.bayes_space import GridDensity, Interval, clr
from btsmodes.errors import BadDimension, BadKnots, DegenerateFlat
from btsmodes.splines import (CompositionalSpline, SplineBasis, count_modes, curvature, fit_coefficients,
                              fit_penalized, penalized_loss, spline_modes)

from conftest import random_spline

seeds = st.integers(0, 2**32 - 1)


def affine_theta(basis, slope=1.0):
    """ZB coordinates of the clr function slope * (x - centre), by an almost unpenalised fit."""
    iv = basis.interval
    x = iv.grid(1001)
    return fit_coefficients(slope * (x - 0.5 * (iv.a + iv.b)), basis, 1 - 1e-12)


def two_bump_target(interval, m=1001):
    x = interval.grid(m)
    dens = 0.5 * normal.pdf(x, 0.3, 0.08) + 0.5 * normal.pdf(x, 0.7, 0.08) + 1e-3
    return clr(dens, interval)


# -- basis -------------------------------------------------------------------------

def test_knots_for_minimal_dimension(unit):
    b = SplineBasis(unit, degree=3, dimension=4)
    np.testing.assert_array_equal(b.knots, [0.0, 0.5, 1.0])


def test_basis_errors(unit):
    with pytest.raises(BadDimension):
        SplineBasis(unit, degree=3, dimension=2)
    with pytest.raises(BadDimension):
        SplineBasis(unit, degree=2, dimension=5)
    with pytest.raises(BadKnots):
        SplineBasis(unit, degree=3, dimension=5, knots=[0.0, 0.6, 0.4, 1.0])
    with pytest.raises(BadKnots):
        SplineBasis(unit, degree=3, dimension=5, knots=[0.0, 0.5, 1.0])
    with pytest.raises(BadKnots):
        SplineBasis(unit, degree=3, dimension=5, knots=[0.1, 0.4, 0.6, 1.0])
    with pytest.raises(BadDimension):
        CompositionalSpline(SplineBasis(unit, dimension=5), np.zeros(4))


def test_basis_functions_have_zero_integral(basis):
    x = basis.interval.grid(400_001)
    z = basis.design(x)
    integrals = np.trapezoid(z, x, axis=0)
    assert np.max(np.abs(integrals)) <= 1e-9


def test_explicit_knots(unit):
    b = SplineBasis(unit, degree=3, dimension=5, knots=[0.0, 0.1, 0.5, 1.0])
    np.testing.assert_array_equal(b.knots, [0.0, 0.1, 0.5, 1.0])
    x = unit.grid(200_001)
    assert np.max(np.abs(simpson(b.design(x), x=x, axis=0))) <= 1e-9


def test_gram_matches_brute_force_quadrature(basis):
    x = basis.interval.grid(200_001)
    z = basis.design(x)
    brute = simpson(z[:, :, None] * z[:, None, :], x=x, axis=0)
    np.testing.assert_allclose(basis.gram, brute, rtol=0, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(basis.gram) > 0)


def test_penalty_matches_brute_force_quadrature(basis):
    x = basis.interval.grid(200_001)
    z2 = basis.design(x, nu=2)
    brute = simpson(z2[:, :, None] * z2[:, None, :], x=x, axis=0)
    np.testing.assert_allclose(basis.penalty, brute, rtol=1e-8, atol=1e-6)


# -- fitting -----------------------------------------------------------------------

def _cubic_target(basis):
    # a cubic clr lies in the spline space exactly (total curvature about 71)
    x = basis.interval.grid(1001)
    return GridDensity(basis.interval, 4 * (x - 0.3) ** 3 - x)


def test_fit_recovers_representable_target(basis):
    target = _cubic_target(basis)
    fit = fit_penalized(target, basis, 0.999)
    assert np.max(np.abs(fit.clr(target.grid) - target.clr_values)) <= 1e-6


def test_fit_bias_vanishes_as_penalty_vanishes(basis):
    target = _cubic_target(basis)
    errs = []
    for alpha in (1 - 1e-3, 1 - 1e-5, 1 - 1e-7, 1 - 1e-9):
        fit = fit_penalized(target, basis, alpha)
        errs.append(np.max(np.abs(fit.clr(target.grid) - target.clr_values)))
    assert all(b < a for a, b in zip(errs[:-1], errs[1:]))
    assert errs[-1] <= 1e-6


def test_heavy_penalty_gives_near_affine_fit(unit, basis):
    target = two_bump_target(unit)
    fit = fit_penalized(target, basis, 1e-4)
    assert curvature(fit) <= 1e-3
    x = target.grid
    s = fit.clr(x)
    line = np.polyval(np.polyfit(x, s, 1), x)
    assert np.max(np.abs(s - line)) <= 1e-2


@given(seeds, st.floats(0.01, 0.99))
@settings(max_examples=30, deadline=None)
def test_fit_beats_zero(seed, alpha):
    basis = SplineBasis(Interval(0.0, 1.0), dimension=12)
    rng = np.random.default_rng(seed)
    target = GridDensity(basis.interval, np.cumsum(rng.standard_normal(201)) * 0.1)
    theta = fit_penalized(target, basis, alpha).theta
    assert penalized_loss(theta, target, basis, alpha) <= penalized_loss(np.zeros(12), target, basis, alpha)


def test_fit_is_locally_optimal(unit, basis):
    target = two_bump_target(unit)
    alpha = 0.9
    theta = fit_penalized(target, basis, alpha).theta
    best = penalized_loss(theta, target, basis, alpha)
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.standard_normal(basis.dimension)
        v /= np.linalg.norm(v)
        assert best <= penalized_loss(theta + 1e-4 * v, target, basis, alpha)
        assert best <= penalized_loss(theta - 1e-4 * v, target, basis, alpha)


def test_fit_rejects_bad_alpha(unit, basis):
    target = two_bump_target(unit)
    for alpha in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            fit_penalized(target, basis, alpha)


def test_curvature_invariant_under_density_scaling(unit, basis):
    x = unit.grid(1001)
    dens = normal.pdf(x, 0.4, 0.2)
    a = fit_penalized(clr(dens, unit), basis, 0.95)
    b = fit_penalized(clr(7.5 * dens, unit), basis, 0.95)
    assert curvature(a) == pytest.approx(curvature(b), rel=1e-10)


# -- curvature -----------------------------------------------------------------------

def test_curvature_of_zero_and_affine(basis):
    assert curvature(CompositionalSpline(basis, np.zeros(basis.dimension))) == 0.0
    theta = affine_theta(basis, 2.0)
    assert curvature(CompositionalSpline(basis, theta)) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_curvature_matches_quadrature(basis, seed):
    spline = random_spline(basis, seed)
    x = basis.interval.grid(200_001)
    brute = simpson(spline.clr_derivative(x, 2) ** 2, x=x)
    assert curvature(spline) == pytest.approx(brute, rel=1e-6)


# -- modes -------------------------------------------------------------------------

def test_monotone_density_has_mode_at_right_end(basis):
    ms = spline_modes(CompositionalSpline(basis, affine_theta(basis, 1.0)))
    assert ms.k == 1
    assert ms.modes[0] == basis.interval.b
    assert ms.antimodes.size == 0


def test_flat_density_is_degenerate(basis):
    with pytest.raises(DegenerateFlat):
        spline_modes(CompositionalSpline(basis, np.zeros(basis.dimension)))


def test_scan_resolution_lower_bound(basis):
    with pytest.raises(ValueError):
        spline_modes(random_spline(basis, 0), scan_resolution=200)


def _brute_force_extrema(spline, n=100_001):
    x = spline.basis.interval.grid(n)
    y = spline.pdf(x)
    inner_max = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1
    inner_min = np.flatnonzero((y[1:-1] < y[:-2]) & (y[1:-1] < y[2:])) + 1
    maxima = list(x[inner_max])
    if y[0] > y[1]:
        maxima.insert(0, x[0])
    if y[-1] > y[-2]:
        maxima.append(x[-1])
    return np.array(maxima), x[inner_min]


def test_two_bump_fit_modes_match_brute_force(unit):
    basis = SplineBasis(unit, dimension=22)
    spline = fit_penalized(two_bump_target(unit), basis, 0.99)
    ms = spline_modes(spline)
    maxima, minima = _brute_force_extrema(spline)
    assert ms.k == 2 and ms.antimodes.size == 1
    np.testing.assert_allclose(ms.modes, maxima, atol=2e-5)
    np.testing.assert_allclose(ms.antimodes, minima, atol=2e-5)
    assert ms.modes[0] < ms.antimodes[0] < ms.modes[1]


@pytest.mark.parametrize("seed", range(10))
def test_mode_set_invariants(basis, seed):
    spline = random_spline(basis, seed, 0.05)
    ms = spline_modes(spline)
    iv = basis.interval
    assert ms.antimodes.size == ms.k - 1
    regions = ms.modal_regions
    assert regions[0][0] == iv.a and regions[-1][1] == iv.b
    for (lo, hi), (lo2, _) in zip(regions[:-1], regions[1:]):
        assert hi == lo2
    pts = np.sort(np.concatenate([ms.modes, ms.antimodes]))
    kinds = ["mode" if p in ms.modes else "anti" for p in pts]
    assert all(a != b for a, b in zip(kinds[:-1], kinds[1:]))
    for m, (lo, hi) in zip(ms.modes, regions):
        assert lo <= m <= hi
        eps = 1e-4 * iv.length
        for nb in (m - eps, m + eps):
            if iv.a <= nb <= iv.b:
                assert spline.pdf(m) > spline.pdf(nb)
    maxima, _ = _brute_force_extrema(spline)
    assert count_modes(spline) == maxima.size
