"""Bayes-space arithmetic for positive densities on a bounded interval.

Densities are carried as centred log-ratio (clr) values on an even grid.
Perturbation and powering become addition and scaling of clr values, and
the Bayes-space inner product is the L2 product of the clr functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NonPositiveDensity

DEFAULT_GRID_SIZE = 1001


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError(f"interval bounds must be finite, got [{self.a}, {self.b}]")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def grid(self, m: int = DEFAULT_GRID_SIZE) -> np.ndarray:
        if m < 3:
            raise ValueError("grid needs at least 3 points")
        return np.linspace(self.a, self.b, m)


def trapezoid_weights(m: int, length: float) -> np.ndarray:
    """Weights w such that ``w @ y`` is the trapezoid integral on an even grid."""
    w = np.full(m, length / (m - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A density on ``interval`` represented by its clr values on an even grid."""

    interval: Interval
    clr_values: np.ndarray
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.clr_values, dtype=float)
        if values.ndim != 1 or values.size < 3:
            raise GridMismatch("clr values must be a 1-D array with at least 3 entries")
        if not np.all(np.isfinite(values)):
            raise ValueError("clr values must be finite")
        weights = trapezoid_weights(values.size, self.interval.length)
        values = values - (weights @ values) / self.interval.length
        values.setflags(write=False)
        object.__setattr__(self, "clr_values", values)
        object.__setattr__(self, "_weights", weights)

    @property
    def m(self) -> int:
        return self.clr_values.size

    @property
    def grid(self) -> np.ndarray:
        return self.interval.grid(self.m)

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    def density(self) -> np.ndarray:
        return clr_inverse(self)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.m == other.m and self.interval == other.interval


def _check_same(f: GridDensity, g: GridDensity) -> None:
    if not f.same_grid(g):
        raise GridMismatch("densities live on different grids")


def clr(density_values, interval: Interval) -> GridDensity:
    """Centred log-ratio transform of positive density values on an even grid."""
    values = np.asarray(density_values, dtype=float)
    if values.ndim != 1 or values.size < 3:
        raise GridMismatch("density values must be a 1-D array with at least 3 entries")
    if np.any(~(values > 0)):
        raise NonPositiveDensity("clr needs strictly positive density values")
    return GridDensity(interval, np.log(values))


def clr_from_log(log_values, interval: Interval) -> GridDensity:
    """Same as :func:`clr` but starting from log-density values (avoids underflow)."""
    return GridDensity(interval, np.asarray(log_values, dtype=float))


def clr_inverse(g: GridDensity) -> np.ndarray:
    """Density values on the grid, normalised to integrate to one (trapezoid)."""
    e = np.exp(g.clr_values - g.clr_values.max())
    return e / (g.weights @ e)


def uniform(interval: Interval, m: int = DEFAULT_GRID_SIZE) -> GridDensity:
    return GridDensity(interval, np.zeros(m))


def perturb(f: GridDensity, g: GridDensity) -> GridDensity:
    _check_same(f, g)
    return GridDensity(f.interval, f.clr_values + g.clr_values)


def power(gamma: float, f: GridDensity) -> GridDensity:
    return GridDensity(f.interval, gamma * f.clr_values)


def inner_product(f: GridDensity, g: GridDensity) -> float:
    _check_same(f, g)
    return float(f.weights @ (f.clr_values * g.clr_values))


def norm(f: GridDensity) -> float:
    return float(np.sqrt(inner_product(f, f)))
