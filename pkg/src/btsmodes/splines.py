"""Compositional splines: ZB-spline bases, penalised clr fitting and modes.

A ZB-spline basis of degree ``r`` and dimension ``d`` spans the splines on
``[a, b]`` with ``d - r`` interior knots whose integral vanishes. Each basis
function is the derivative of a degree ``r + 1`` B-spline on the clamped knot
vector, ``Z_i = B_i / c_i - B_{i+1} / c_{i+1}`` with ``c_i`` the integral of
the degree ``r`` B-spline ``B_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.optimize import brentq

from .bayes_space import DEFAULT_GRID_SIZE, GridDensity, Interval
from .errors import BadDimension, BadKnots, DegenerateFlat, SingularSystem

DEFAULT_DEGREE = 3
DEFAULT_SCAN = 2048
_GL_NODES = 16


def _gauss_legendre_pieces(breaks: np.ndarray, n_nodes: int):
    """Composite Gauss-Legendre nodes/weights with one panel per break interval."""
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


class SplineBasis:
    """ZB-spline basis on an interval; immutable after construction."""

    def __init__(self, interval: Interval, degree: int = DEFAULT_DEGREE, dimension: int = 22,
                 knots: str | Sequence[float] = "equidistant"):
        if degree < 3:
            raise BadDimension(f"degree must be >= 3, got {degree}")
        if dimension < degree:
            raise BadDimension(f"dimension {dimension} must be >= degree {degree}")
        if isinstance(knots, str):
            if knots != "equidistant":
                raise BadKnots(f"unknown knot strategy {knots!r}")
            kn = np.linspace(interval.a, interval.b, dimension - degree + 2)
        else:
            kn = np.asarray(knots, dtype=float)
            if kn.size != dimension - degree + 2:
                raise BadKnots(f"expected {dimension - degree + 2} knots, got {kn.size}")
            if np.any(np.diff(kn) <= 0):
                raise BadKnots("knots must be strictly increasing")
            if not (np.isclose(kn[0], interval.a) and np.isclose(kn[-1], interval.b)):
                raise BadKnots("first/last knots must equal the interval bounds")
            kn = kn.copy()
            kn[0], kn[-1] = interval.a, interval.b
        kn.setflags(write=False)
        self.interval = interval
        self.degree = degree
        self.dimension = dimension
        self.knots = kn
        r = degree
        self.full_knots = np.concatenate([np.full(r, kn[0]), kn, np.full(r, kn[-1])])
        # B-spline integrals c_i and the (d+1) x d map from ZB to B-spline coefficients
        c = (self.full_knots[r + 1:] - self.full_knots[:-r - 1]) / (r + 1)
        to_bspline = np.zeros((dimension + 1, dimension))
        idx = np.arange(dimension)
        to_bspline[idx, idx] = 1.0 / c[:-1]
        to_bspline[idx + 1, idx] = -1.0 / c[1:]
        to_bspline.setflags(write=False)
        self.to_bspline = to_bspline
        self._grid_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._scan_cache: dict[int, np.ndarray] = {}

    def __repr__(self):
        return (f"SplineBasis([{self.interval.a:g}, {self.interval.b:g}], degree={self.degree}, "
                f"dimension={self.dimension})")

    # evaluation -------------------------------------------------------------
    def _bspline_design(self, x, nu: int = 0) -> np.ndarray:
        x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), self.interval.a, self.interval.b)
        eye = np.eye(self.dimension + 1)
        spl = BSpline(self.full_knots, eye, self.degree, extrapolate=False)
        if nu:
            spl = spl.derivative(nu)
        out = spl(x)
        return np.nan_to_num(out)

    def design(self, x, nu: int = 0) -> np.ndarray:
        """Matrix of ZB-spline values (or ``nu``-th derivatives) at ``x``, shape (len(x), d)."""
        return self._bspline_design(x, nu) @ self.to_bspline

    def spline(self, theta, nu: int = 0) -> BSpline:
        """The clr spline with ZB coordinates ``theta`` as a scipy BSpline."""
        coef = self.to_bspline @ np.asarray(theta, dtype=float)
        spl = BSpline(self.full_knots, coef, self.degree, extrapolate=True)
        return spl.derivative(nu) if nu else spl

    # quadrature -------------------------------------------------------------
    def quadrature(self, lo: float | None = None, hi: float | None = None, n_nodes: int = _GL_NODES):
        """Gauss-Legendre rule over ``[lo, hi]`` with panels split at the knots."""
        lo = self.interval.a if lo is None else lo
        hi = self.interval.b if hi is None else hi
        inner = self.knots[(self.knots > lo) & (self.knots < hi)]
        breaks = np.concatenate([[lo], inner, [hi]])
        return _gauss_legendre_pieces(breaks, n_nodes)

    @cached_property
    def _exact_rule(self):
        return self.quadrature(n_nodes=self.degree + 2)

    @cached_property
    def gram(self) -> np.ndarray:
        """Inner products of the ZB-splines, ``M_ij = <Z_i, Z_j>`` (exact)."""
        x, w = self._exact_rule
        z = self.design(x)
        g = (z * w[:, None]).T @ z
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        return g

    @cached_property
    def penalty(self) -> np.ndarray:
        """Curvature matrix ``P_ij = int Z_i'' Z_j''`` (exact)."""
        x, w = self._exact_rule
        z2 = self.design(x, nu=2)
        p = (z2 * w[:, None]).T @ z2
        p = 0.5 * (p + p.T)
        p.setflags(write=False)
        return p

    @cached_property
    def _density_rule(self):
        x, w = self.quadrature()
        return x, w, self.design(x)

    def grid_system(self, m: int = DEFAULT_GRID_SIZE):
        """Design matrix on the even m-grid and its cross-product, cached per m."""
        if m not in self._grid_cache:
            z = self.design(self.interval.grid(m))
            self._grid_cache[m] = (z, z.T @ z)
        return self._grid_cache[m]

    def scan_derivative(self, n: int = DEFAULT_SCAN) -> np.ndarray:
        if n not in self._scan_cache:
            x = np.linspace(self.interval.a, self.interval.b, n)
            self._scan_cache[n] = self.design(x, nu=1)
        return self._scan_cache[n]


@dataclass(frozen=True, eq=False)
class CompositionalSpline:
    """Density ``clr^-1(sum_i theta_i Z_i)`` on the basis interval."""

    basis: SplineBasis
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.basis.dimension,):
            raise BadDimension(f"theta must have length {self.basis.dimension}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @cached_property
    def _spl(self) -> BSpline:
        return self.basis.spline(self.theta)

    @cached_property
    def log_normalizer(self) -> float:
        """``log int_a^b exp(clr(x)) dx``."""
        x, w, z = self.basis._density_rule
        s = z @ self.theta
        top = s.max()
        return float(top + np.log(w @ np.exp(s - top)))

    def clr(self, x) -> np.ndarray:
        return self._spl(np.asarray(x, dtype=float))

    def clr_derivative(self, x, nu: int = 1) -> np.ndarray:
        return self.basis.spline(self.theta, nu)(np.asarray(x, dtype=float))

    def log_pdf(self, x) -> np.ndarray:
        """Log density; ``-inf`` outside the support interval."""
        x = np.asarray(x, dtype=float)
        out = self.clr(x) - self.log_normalizer
        iv = self.basis.interval
        return np.where((x >= iv.a) & (x <= iv.b), out, -np.inf)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    def to_grid(self, m: int = DEFAULT_GRID_SIZE) -> GridDensity:
        return GridDensity(self.basis.interval, self.clr(self.basis.interval.grid(m)))

    def curvature(self) -> float:
        return curvature(self)


def fit_penalized(target: GridDensity, basis: SplineBasis, alpha: float) -> CompositionalSpline:
    """Minimise ``alpha * sum (clr f(t_i) - s(t_i))^2 + (1 - alpha) * int s''^2``."""
    return CompositionalSpline(basis, fit_coefficients(target.clr_values, basis, alpha))


def fit_coefficients(clr_values: np.ndarray, basis: SplineBasis, alpha: float) -> np.ndarray:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    clr_values = np.asarray(clr_values, dtype=float)
    if clr_values.ndim != 1 or clr_values.size < 3:
        raise ValueError("target grid must have at least 3 points")
    z, ztz = basis.grid_system(clr_values.size)
    lhs = alpha * ztz + (1.0 - alpha) * basis.penalty
    rhs = alpha * (z.T @ clr_values)
    try:
        factor = linalg.cho_factor(lhs, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are not positive definite") from exc
    if np.min(np.abs(np.diag(factor[0]))) ** 2 < 1e-13 * np.max(np.abs(np.diag(lhs))):
        raise SingularSystem("normal equations are numerically rank deficient")
    return linalg.cho_solve(factor, rhs, check_finite=False)


def penalized_loss(theta, target: GridDensity, basis: SplineBasis, alpha: float) -> float:
    z, _ = basis.grid_system(target.m)
    resid = target.clr_values - z @ np.asarray(theta, dtype=float)
    return float(alpha * resid @ resid + (1.0 - alpha) * theta @ basis.penalty @ theta)


def curvature(spline: CompositionalSpline) -> float:
    """Total curvature ``int s''(x)^2 dx`` of the clr spline."""
    th = spline.theta
    return float(max(th @ spline.basis.penalty @ th, 0.0))


# mode extraction -------------------------------------------------------------

@dataclass(frozen=True)
class ModeSet:
    interval: Interval
    modes: np.ndarray
    mode_heights: np.ndarray
    antimodes: np.ndarray
    antimode_heights: np.ndarray

    @property
    def k(self) -> int:
        return int(self.modes.size)

    @property
    def modal_regions(self) -> list[tuple[float, float]]:
        ends = np.concatenate([[self.interval.a], self.antimodes, [self.interval.b]])
        return [(float(lo), float(hi)) for lo, hi in zip(ends[:-1], ends[1:])]


def critical_points(deriv: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                    scan: int = DEFAULT_SCAN, values: np.ndarray | None = None,
                    flat_tol: float | None = None, xtol: float | None = None):
    """Locate local maxima and interior minima of a function from its derivative.

    The derivative is scanned on ``scan`` even points (``values`` may carry the
    precomputed scan) and each sign change is refined with Brent's method.
    Boundary points count as maxima when the function decreases away from them.

    Returns ``(maxima, minima)`` as sorted arrays with maxima and minima alternating.
    """
    x = np.linspace(lo, hi, scan)
    d = deriv(x) if values is None else values
    if flat_tol is not None:
        small = np.abs(d) <= flat_tol
        if small.any():
            run = _longest_run(small)
            if run >= 4:
                raise DegenerateFlat("derivative vanishes over more than two scan cells")
    xtol = 1e-10 * (hi - lo) if xtol is None else xtol
    nz = np.flatnonzero(d != 0)
    if nz.size == 0:
        raise DegenerateFlat("derivative vanishes on the whole scan grid")
    sg = np.sign(d[nz])
    change = np.flatnonzero(sg[:-1] != sg[1:])

    def scalar(t):
        return float(deriv(np.array([t]))[0])

    maxima, minima = [], []
    if sg[0] < 0:
        maxima.append(lo)
    for c in change:
        i, j = nz[c], nz[c + 1]
        left, right = x[i], x[j]
        if j - i > 1:
            # zero scan values in between: the root is one of them up to tolerance
            root = 0.5 * (x[i + 1] + x[j - 1])
        else:
            root = brentq(scalar, left, right, xtol=xtol)
        (maxima if sg[c] > 0 else minima).append(root)
    if sg[-1] > 0:
        maxima.append(hi)
    return np.array(maxima), np.array(minima)


def _longest_run(mask: np.ndarray) -> int:
    if not mask.any():
        return 0
    padded = np.concatenate([[0], mask.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return int(np.max(edges[1::2] - edges[::2]))


def spline_modes(spline: CompositionalSpline, scan_resolution: int = DEFAULT_SCAN) -> ModeSet:
    """Modes, antimodes and modal regions of a compositional spline density."""
    if scan_resolution < 201:
        raise ValueError("scan_resolution must be >= 201")
    basis = spline.basis
    iv = basis.interval
    values = basis.scan_derivative(scan_resolution) @ spline.theta
    deriv = spline.basis.spline(spline.theta, 1)
    maxima, minima = critical_points(
        deriv, iv.a, iv.b, scan_resolution, values=values,
        flat_tol=1e-9 / iv.length,
    )
    return ModeSet(iv, maxima, spline.pdf(maxima), minima, spline.pdf(minima))


def count_modes(spline: CompositionalSpline, scan_resolution: int = DEFAULT_SCAN) -> int:
    return spline_modes(spline, scan_resolution).k
