"""Gaussian kernel density estimation utilities.

Exact and binned evaluation, mode counting, critical bandwidths, two-stage
direct plug-in bandwidth selectors for density derivatives, and the
modal-region outlier filter.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import eval_hermitenorm, logsumexp, ndtr

from .errors import AllRemoved, BadBandwidth, BracketFailure, ZeroVariance
from .splines import critical_points

SQRT_2PI = math.sqrt(2.0 * math.pi)
BINNED_THRESHOLD = 2000
DEFAULT_BINS = 4096
DEFAULT_OUTLIER_THRESHOLD = 1e-3
_CHUNK = 1 << 20


def as_sample(values) -> np.ndarray:
    """Validate data and return it as a sorted float array."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("a sample needs at least two values")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample values must be finite")
    return np.sort(x)


def _check_h(h: float) -> None:
    if not (np.isfinite(h) and h > 0):
        raise BadBandwidth(f"bandwidth must be finite and positive, got {h}")


def _chunks(n_data: int, n_query: int):
    step = max(1, _CHUNK // max(n_data, 1))
    for start in range(0, n_query, step):
        yield slice(start, min(start + step, n_query))


def _naive(x: np.ndarray, h: float, q: np.ndarray) -> np.ndarray:
    out = np.empty(q.size)
    for sl in _chunks(x.size, q.size):
        u = (q[sl, None] - x[None, :]) / h
        out[sl] = np.exp(-0.5 * u * u).sum(axis=1)
    return out / (x.size * h * SQRT_2PI)


def _binned(x: np.ndarray, h: float, q: np.ndarray, bins: int) -> np.ndarray:
    lo = min(x[0], q.min()) - 4.0 * h
    hi = max(x[-1], q.max()) + 4.0 * h
    delta = (hi - lo) / (bins - 1)
    pos = (x - lo) / delta
    left = np.floor(pos).astype(int)
    frac = pos - left
    counts = np.bincount(left, weights=1.0 - frac, minlength=bins + 1)
    counts += np.bincount(left + 1, weights=frac, minlength=bins + 1)
    counts = counts[:bins]
    half = min(int(math.ceil(8.0 * h / delta)), bins - 1)
    offsets = np.arange(-half, half + 1) * delta / h
    kern = np.exp(-0.5 * offsets**2) / (x.size * h * SQRT_2PI)
    dens = fftconvolve(counts, kern, mode="same")
    grid = lo + delta * np.arange(bins)
    return np.maximum(np.interp(q, grid, dens), 0.0)


def kde_eval(sample, h: float, query, bins: int | None = None) -> np.ndarray:
    """Gaussian KDE at ``query``.

    ``bins=None`` chooses automatically: exact evaluation up to 2000 points,
    linear binning with 4096 bins above that. Pass ``bins=0`` to force the
    exact sum.
    """
    _check_h(h)
    x = np.asarray(sample, dtype=float)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    if bins is None:
        bins = DEFAULT_BINS if x.size > BINNED_THRESHOLD else 0
    if bins:
        if bins < 256:
            raise ValueError("binned evaluation needs at least 256 bins")
        return _binned(x, h, q, bins)
    return _naive(x, h, q)


def kde_logpdf(sample, h: float, query, bins: int | None = None) -> np.ndarray:
    """Log of the KDE, computed without underflow on the exact path."""
    _check_h(h)
    x = np.asarray(sample, dtype=float)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    if bins is None:
        bins = DEFAULT_BINS if x.size > BINNED_THRESHOLD else 0
    if bins:
        dens = _binned(x, h, q, bins)
        tiny = dens <= 1e-300
        if tiny.any():
            dens[tiny] = np.exp(kde_logpdf(x, h, q[tiny], bins=0))
        return np.log(dens)
    dens = _naive(x, h, q)
    out = np.empty(q.size)
    ok = dens > 1e-250
    out[ok] = np.log(dens[ok])
    far = np.flatnonzero(~ok)
    if far.size:
        u = (q[far, None] - x[None, :]) / h
        out[far] = logsumexp(-0.5 * u * u, axis=1) - math.log(x.size * h * SQRT_2PI)
    return out


def kde_derivative(sample, h: float, query) -> np.ndarray:
    x = np.asarray(sample, dtype=float)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    out = np.empty(q.size)
    for sl in _chunks(x.size, q.size):
        u = (q[sl, None] - x[None, :]) / h
        out[sl] = -(u * np.exp(-0.5 * u * u)).sum(axis=1)
    return out / (x.size * h * h * SQRT_2PI)


def kde_cdf(sample, h: float, query) -> np.ndarray:
    x = np.asarray(sample, dtype=float)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    out = np.empty(q.size)
    for sl in _chunks(x.size, q.size):
        out[sl] = ndtr((q[sl, None] - x[None, :]) / h).mean(axis=1)
    return out


def _scan_size(span: float, h: float, minimum: int = 2048, maximum: int = 200_000) -> int:
    return int(min(max(minimum, math.ceil(20.0 * span / h)), maximum))


def kde_critical_points(sample, h: float, lo: float | None = None, hi: float | None = None):
    """Modes and antimodes of the KDE between ``lo`` and ``hi`` (default: data range)."""
    _check_h(h)
    x = np.asarray(sample, dtype=float)
    lo = float(x.min()) if lo is None else lo
    hi = float(x.max()) if hi is None else hi
    if hi <= lo:
        return np.array([lo]), np.array([])
    scan = _scan_size(hi - lo, h)
    return critical_points(lambda t: kde_derivative(x, h, t), lo, hi, scan)


def count_kde_modes(sample, h: float) -> int:
    """Number of local maxima of the Gaussian KDE with bandwidth ``h``."""
    x = np.asarray(sample, dtype=float)
    if x.max() == x.min():
        return 1
    # every KDE mode lies inside the data range; pad so the ends are never maxima
    maxima, _ = kde_critical_points(x, h, x.min() - 0.5 * h, x.max() + 0.5 * h)
    return int(maxima.size)


def critical_bandwidth(sample, k: int, rtol: float = 1e-6) -> float:
    """Smallest bandwidth at which the KDE has at most ``k`` modes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = as_sample(sample)
    if np.unique(x).size <= k:
        raise BracketFailure(f"sample cannot produce more than {k} modes")
    spread = float(x[-1] - x[0])
    h_hi = float(np.std(x)) or spread
    while count_kde_modes(x, h_hi) > k:
        h_hi *= 2.0
    h_lo = h_hi / 2.0
    floor = 1e-4 * spread
    while count_kde_modes(x, h_lo) <= k:
        h_hi = h_lo
        h_lo /= 2.0
        if h_lo < floor:
            raise BracketFailure(f"no bandwidth above {floor:g} gives more than {k} modes")
    while h_hi - h_lo > rtol * h_hi:
        mid = math.sqrt(h_lo * h_hi)
        if count_kde_modes(x, mid) <= k:
            h_hi = mid
        else:
            h_lo = mid
    return h_hi


# plug-in bandwidths -----------------------------------------------------------

def _psi_normal(order: int, sigma: float) -> float:
    """Normal-scale value of ``psi_order = int f^(order) f`` (order even)."""
    s = order // 2
    return (-1) ** s * math.factorial(2 * s) / ((2 * sigma) ** (2 * s + 1) * math.factorial(s) * math.sqrt(math.pi))


def _psi_hat(x: np.ndarray, order: int, g: float) -> float:
    """Kernel estimate of ``psi_order`` with pilot bandwidth ``g`` (diagonal included)."""
    total = 0.0
    n = x.size
    for sl in _chunks(n, n):
        u = (x[sl, None] - x[None, :]) / g
        total += float((eval_hermitenorm(order, u) * np.exp(-0.5 * u * u)).sum())
    return total / (n * n * g ** (order + 1) * SQRT_2PI)


def _phi_deriv_at_zero(order: int) -> float:
    return float(eval_hermitenorm(order, 0.0)) / SQRT_2PI


def _roughness_phi_deriv(r: int) -> float:
    """``int (phi^(r))^2``."""
    return math.factorial(2 * r) / (2 ** (2 * r + 1) * math.factorial(r) * math.sqrt(math.pi))


def _pilot(order: int, psi_next: float, n: int) -> float:
    return (2.0 * _phi_deriv_at_zero(order) / (-psi_next * n)) ** (1.0 / (order + 3))


def _amise_bandwidth(r: int, psi: float, n: int) -> float:
    rough = (-1) ** r * psi
    return ((2 * r + 1) * _roughness_phi_deriv(r) / (abs(rough) * n)) ** (1.0 / (2 * r + 5))


def _scale(x: np.ndarray) -> float:
    sigma = float(np.std(x, ddof=1))
    if not sigma > 0:
        raise ZeroVariance("sample variance is zero")
    return sigma


def normal_scale_bandwidth(sample, order: int = 0) -> float:
    """Normal-reference bandwidth for the ``order``-th density derivative."""
    x = np.asarray(sample, dtype=float)
    sigma = _scale(x)
    return _amise_bandwidth(order, _psi_normal(2 * order + 4, sigma), x.size)


def select_bandwidth(sample, order: int = 0) -> float:
    """Two-stage direct plug-in bandwidth for estimating the ``order``-th derivative."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x = np.asarray(sample, dtype=float)
    if x.size < 4:
        raise ValueError("plug-in selection needs at least 4 points")
    sigma = _scale(x)
    n = x.size
    target = 2 * order + 4
    psi = _psi_normal(target + 4, sigma)
    for stage_order in (target + 2, target):
        g = _pilot(stage_order, -abs(psi) * (-1) ** (stage_order // 2), n)
        psi = _psi_hat(x, stage_order, g)
    return _amise_bandwidth(order, psi, n)


# outlier filtering ---------------------------------------------------------------

def modal_region_masses(sample, h: float):
    """Modal-region boundaries of the KDE and the probability mass of each region."""
    x = np.asarray(sample, dtype=float)
    if x.max() == x.min():
        return np.array([-np.inf, np.inf]), np.array([1.0])
    _, minima = kde_critical_points(x, h, x.min() - 0.5 * h, x.max() + 0.5 * h)
    edges = np.concatenate([[-np.inf], minima, [np.inf]])
    cdf = np.concatenate([[0.0], kde_cdf(x, h, minima), [1.0]])
    return edges, np.diff(cdf)


def filter_outliers_on_grid(sample, h: float, grid: np.ndarray, log_kde: np.ndarray,
                            mass_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> np.ndarray:
    """Outlier filter reusing KDE log-values already computed on an even grid.

    Antimodes are located to grid resolution, which is enough for the region
    masses since the density is smallest there. ``grid`` must cover the data range.
    """
    x = np.asarray(sample, dtype=float)
    if mass_threshold == 0.0:
        return x
    step = np.diff(log_kde)
    idx = np.flatnonzero((step[:-1] < 0) & (step[1:] >= 0)) + 1
    if idx.size == 0:
        return x
    minima = grid[idx]
    edges = np.concatenate([[-np.inf], minima, [np.inf]])
    masses = np.diff(np.concatenate([[0.0], kde_cdf(x, h, minima), [1.0]]))
    small = masses < mass_threshold
    if not small.any():
        return x
    if small.all():
        raise AllRemoved("every modal region falls below the mass threshold")
    region = np.searchsorted(edges, x, side="right") - 1
    return x[~small[np.clip(region, 0, masses.size - 1)]]


def filter_outliers(sample, pilot_h: float, mass_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> np.ndarray:
    """Drop points lying in KDE modal regions whose probability mass is below threshold."""
    if not 0.0 <= mass_threshold < 0.5:
        raise ValueError("mass_threshold must lie in [0, 0.5)")
    x = as_sample(sample)
    if mass_threshold == 0.0:
        return x
    edges, masses = modal_region_masses(x, pilot_h)
    small = masses < mass_threshold
    if not small.any():
        return x
    if small.all():
        raise AllRemoved("every modal region falls below the mass threshold")
    region = np.searchsorted(edges, x, side="right") - 1
    return x[~small[np.clip(region, 0, masses.size - 1)]]
