"""Analysis stage: simplicial functional PCA of the exploration splines and the
one-parameter model ``mu (+) delta (.) sigma`` with its Jeffreys prior."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import eigh
from scipy.special import logsumexp

from ..errors import DegenerateFlat, OutOfSupport, ZeroVariance
from ..splines import CompositionalSpline, SplineBasis, count_modes

log = logging.getLogger(__name__)

DEFAULT_PARTITION_GRID = 512


@dataclass(eq=False)
class SfpcaModel:
    basis: SplineBasis = field(repr=False)
    mean: np.ndarray  # ZB coordinates of mu
    stdev: np.ndarray  # ZB coordinates of sigma = sqrt(lambda_1) * PC_1
    eigenvalues: np.ndarray
    components: np.ndarray  # (d, d), column j holds the coordinates of PC_j
    scores: np.ndarray  # s_i on PC_1
    deltas: np.ndarray  # s_i / sqrt(lambda_1)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.deltas.min()), float(self.deltas.max())

    @property
    def width(self) -> float:
        lo, hi = self.support
        return hi - lo

    def theta(self, delta: float) -> np.ndarray:
        return self.mean + delta * self.stdev

    @cached_property
    def _rule(self):
        """GL nodes/weights with both clr parts evaluated there."""
        x, w, z = self.basis._density_rule
        return x, np.log(w), z @ self.mean, z @ self.stdev

    def log_normalizer(self, delta) -> np.ndarray:
        """``log int exp(s_mu + delta s_sigma)``, vectorised over ``delta``."""
        _, logw, s_mu, s_sigma = self._rule
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        return logsumexp(logw[None, :] + s_mu[None, :] + d[:, None] * s_sigma[None, :], axis=1)


def run_sfpca(thetas, basis: SplineBasis, mode_counts=None, rtol: float = 1e-12) -> SfpcaModel:
    """SFPCA of spline coordinates (rows of ``thetas``) in the Bayes-space metric.

    The sign of the first PC is fixed so that scores correlate non-negatively
    with ``mode_counts`` when given (otherwise with the first coordinate of the
    back-mapped PC), making the result deterministic.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    nu = thetas.shape[0]
    if nu < 2:
        raise ValueError("SFPCA needs at least two splines")
    mean = thetas.mean(axis=0)
    c = thetas - mean
    evals_m, evecs_m = eigh(basis.gram)
    evals_m = np.clip(evals_m, 0.0, None)
    root = (evecs_m * np.sqrt(evals_m)) @ evecs_m.T
    inv_root = (evecs_m / np.sqrt(evals_m)) @ evecs_m.T
    cm = c @ root
    lam, u = eigh(cm.T @ cm / nu)
    order = np.argsort(lam)[::-1]
    lam, u = np.clip(lam[order], 0.0, None), u[:, order]
    scale = max(float(np.abs(thetas).max()), 1.0) ** 2
    if lam[0] <= rtol * scale:
        raise ZeroVariance("all exploration splines coincide")
    rho = inv_root @ u
    scores = c @ basis.gram @ rho[:, 0]
    ref = None if mode_counts is None else np.asarray(mode_counts, dtype=float)
    if ref is not None and np.ptp(ref) > 0:
        sign = 1.0 if np.corrcoef(scores, ref)[0, 1] >= 0 else -1.0
    else:
        sign = 1.0 if rho[np.argmax(np.abs(rho[:, 0])), 0] >= 0 else -1.0
    rho[:, 0] *= sign
    scores = scores * sign
    sd = float(np.sqrt(lam[0]))
    return SfpcaModel(basis, mean, sd * rho[:, 0], lam, rho, scores, scores / sd)


def sfpca_density(model: SfpcaModel, delta: float, check: bool = True) -> CompositionalSpline:
    """The density ``mu (+) delta (.) sigma`` as a compositional spline."""
    lo, hi = model.support
    tol = 1e-12 * max(model.width, 1.0)
    if check and not (lo - tol <= delta <= hi + tol):
        raise OutOfSupport(f"delta={delta} outside [{lo}, {hi}]")
    return CompositionalSpline(model.basis, model.theta(delta))


def jeffreys_prior(model: SfpcaModel, delta) -> np.ndarray:
    """Unnormalised Jeffreys prior ``sqrt(Var[s_sigma(X_delta)])``.

    ``s_sigma`` is the clr of sigma; the variance is taken under the model
    density at ``delta`` by Gauss-Legendre quadrature (exponential family in
    delta, so this is the square root of the Fisher information).
    """
    _, logw, s_mu, s_sigma = model._rule
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    logp = logw[None, :] + s_mu[None, :] + d[:, None] * s_sigma[None, :]
    p = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    m1 = p @ s_sigma
    var = p @ (s_sigma**2) - m1**2
    return np.sqrt(np.clip(var, 0.0, None))


@dataclass
class ModalityPartition:
    """Consecutive δ-pieces ``(lo, hi, k)`` covering the support."""

    pieces: list[tuple[float, float, int]]

    @property
    def modalities(self) -> list[int]:
        return sorted({k for _, _, k in self.pieces})

    def intervals(self, k: int) -> list[tuple[float, float]]:
        return [(lo, hi) for lo, hi, kk in self.pieces if kk == k]

    def count_at(self, delta: float) -> int:
        """Mode count at ``delta``; a shared piece endpoint goes to the smaller count."""
        hits = [k for lo, hi, k in self.pieces if lo <= delta <= hi]
        if not hits:
            raise OutOfSupport(f"delta={delta} outside the partition")
        return min(hits)


def _count(model: SfpcaModel, delta: float) -> int | None:
    try:
        return count_modes(sfpca_density(model, delta, check=False))
    except DegenerateFlat:
        return None


def modality_partition(model: SfpcaModel, grid_resolution: int = DEFAULT_PARTITION_GRID,
                       rtol: float = 1e-8) -> ModalityPartition:
    """Split the δ-support into maximal pieces of constant mode count.

    Counts on an even grid locate the changes, which are then refined by
    bisection to ``rtol * |Delta|``. A grid point with a flat (uncountable)
    density borrows the count of its left neighbour.
    """
    if grid_resolution < 256:
        raise ValueError("grid_resolution must be >= 256")
    lo, hi = model.support
    grid = np.linspace(lo, hi, grid_resolution)
    counts = [_count(model, d) for d in grid]
    fill = next((c for c in counts if c is not None), None)
    if fill is None:
        raise DegenerateFlat("every density in the SFPCA model is flat")
    for i, c in enumerate(counts):
        if c is None:
            counts[i] = fill
        fill = counts[i]
    tol = rtol * (hi - lo)
    pieces = []
    start = lo
    for i in range(grid_resolution - 1):
        k_left, k_right = counts[i], counts[i + 1]
        if k_left == k_right:
            continue
        a, b = grid[i], grid[i + 1]
        while b - a > tol:
            mid = 0.5 * (a + b)
            if _count(model, mid) == k_left:
                a = mid
            else:
                b = mid
        cut = 0.5 * (a + b)
        pieces.append((start, cut, k_left))
        start = cut
    pieces.append((start, hi, counts[-1]))
    return ModalityPartition(_merge_adjacent(pieces))


def _merge_adjacent(pieces):
    out = []
    for lo, hi, k in pieces:
        if out and out[-1][2] == k:
            out[-1] = (out[-1][0], hi, k)
        else:
            out.append((lo, hi, k))
    return out
