"""Exploration stage: posterior over (bandwidth, smoothing factor) of KDE-guided splines."""

from __future__ import annotations

import math
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..bayes_space import DEFAULT_GRID_SIZE, Interval, trapezoid_weights
from ..errors import BTSError, DegenerateBandwidths, DegenerateFlat
from ..inference import (LogTransform, ProbitTransform, TransformedTarget, log_normal_pdf,
                         map_estimate, rw_metropolis)
from ..kde import (DEFAULT_OUTLIER_THRESHOLD, as_sample, filter_outliers_on_grid, kde_logpdf,
                   select_bandwidth)
from ..splines import CompositionalSpline, SplineBasis, count_modes, fit_coefficients

BETA_ALPHA = 99.0
# alpha used for the unpenalised fits that calibrate the curvature prior
_ALPHA_LIMIT = 1.0 - 1e-10


@dataclass
class ExploreConfig:
    mu_h: float
    sigma_h: float
    lambda_xi: float
    beta_alpha: float = BETA_ALPHA
    dimension: int = 22
    degree: int = 3
    grid_size: int = DEFAULT_GRID_SIZE
    steps: int = 4375
    burn_in: int | None = None
    target_draws: int = 700
    proposal_scale: float = 0.25
    seed: int = 0
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD
    discretised: bool = False

    def __post_init__(self):
        if not self.sigma_h > 0:
            raise ValueError("sigma_h must be positive")
        if not self.lambda_xi > 0:
            raise ValueError("lambda_xi must be positive")
        if self.beta_alpha < 1:
            raise ValueError("beta_alpha must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class ExploreModel:
    """KDE -> compositional spline map for a fixed sample, with cached evaluations."""

    def __init__(self, sample, dimension: int = 22, degree: int = 3, grid_size: int = DEFAULT_GRID_SIZE,
                 outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD, cache_size: int = 64):
        self.sample = as_sample(sample)
        if self.sample[-1] == self.sample[0]:
            raise ValueError("sample has zero range")
        self.interval = Interval(float(self.sample[0]), float(self.sample[-1]))
        self.basis = SplineBasis(self.interval, degree, dimension)
        self.grid = self.interval.grid(grid_size)
        self._w = trapezoid_weights(grid_size, self.interval.length)
        self.outlier_threshold = outlier_threshold
        self._data_design = self.basis.design(self.sample)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def filtered(self, h: float) -> np.ndarray:
        return self._filtered_kde(h)[0]

    def _filtered_kde(self, h: float):
        logf = kde_logpdf(self.sample, h, self.grid)
        kept = filter_outliers_on_grid(self.sample, h, self.grid, logf, self.outlier_threshold)
        if kept.size < self.sample.size:
            logf = kde_logpdf(kept, h, self.grid)
        return kept, logf

    def target_clr(self, h: float) -> np.ndarray:
        """clr of the outlier-filtered KDE on the grid."""
        return self._target(h)[0]

    def _target(self, h: float):
        _, logf = self._filtered_kde(h)
        step = np.diff(logf)
        kde_modes = int(np.count_nonzero((step[:-1] > 0) & (step[1:] <= 0)))
        kde_modes += int(step[0] <= 0) + int(step[-1] > 0)
        return logf - (self._w @ logf) / self.interval.length, kde_modes

    def theta(self, h: float, alpha: float) -> np.ndarray:
        return self.evaluate(h, alpha)["theta"]

    def spline(self, h: float, alpha: float) -> CompositionalSpline:
        return CompositionalSpline(self.basis, self.theta(h, alpha))

    def evaluate(self, h: float, alpha: float) -> dict:
        key = (float(h), float(alpha))
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        target, kde_modes = self._target(h)
        theta = fit_coefficients(target, self.basis, alpha)
        spline = CompositionalSpline(self.basis, theta)
        try:
            k = count_modes(spline)
        except DegenerateFlat:
            k = None
        out = {
            "theta": theta,
            "k": k,
            "xi": float(max(theta @ self.basis.penalty @ theta, 0.0)),
            "loglik": self.log_likelihood(spline),
            "kde_modes": kde_modes,
        }
        self._cache[key] = out
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return out

    def log_likelihood(self, spline: CompositionalSpline) -> float:
        s = self._data_design @ spline.theta
        return float(s.sum() - self.sample.size * spline.log_normalizer)

    def curvature_at(self, h: float, alpha: float = _ALPHA_LIMIT) -> float:
        return self.evaluate(h, alpha)["xi"]


def tune_hyperparams(sample, discretised: bool = False, model: ExploreModel | None = None):
    """Empirical prior hyperparameters ``(mu_h, sigma_h, beta_alpha, lambda_xi)``."""
    x = as_sample(sample)
    orders = (1, 2) if discretised else (0, 1)
    h1, h2 = (select_bandwidth(x, r) for r in orders)
    mu_h, sigma_h = hyperparams_from_bandwidths(h1, h2)
    model = model or ExploreModel(x)
    xi1, xi2 = model.curvature_at(h1), model.curvature_at(h2)
    return mu_h, sigma_h, BETA_ALPHA, curvature_rate(xi1, xi2)


def hyperparams_from_bandwidths(h1: float, h2: float, sigma: float = 1.0) -> tuple[float, float]:
    """Log-normal location/scale placing ``[log h1, log h2]`` at +-``sigma`` standard deviations."""
    if not h1 < h2:
        raise DegenerateBandwidths(f"need h1 < h2, got {h1} and {h2}")
    return math.log(math.sqrt(h1 * h2)), math.log(math.sqrt(h2 / h1)) / sigma


def curvature_rate(xi1: float, xi2: float) -> float:
    """Exponential rate whose mean is the average of the two curvatures."""
    return 2.0 / (xi1 + xi2)


def log_prior_terms(h: float, alpha: float, k: int, xi: float, config: ExploreConfig) -> dict:
    beta = config.beta_alpha
    return {
        "h": float(log_normal_pdf(h, config.mu_h, config.sigma_h)),
        "alpha": math.log(beta) + (beta - 1.0) * math.log(alpha),
        "modes": -1.0 - math.lgamma(k + 1),
        "curvature": math.log(config.lambda_xi) - config.lambda_xi * xi,
    }


def explore_log_posterior(model: ExploreModel, h: float, alpha: float, config: ExploreConfig) -> float:
    """Unnormalised log posterior of ``(h, alpha)``; ``-inf`` for flat splines."""
    if not (h > 0 and 0 < alpha < 1):
        return -math.inf
    try:
        ev = model.evaluate(h, alpha)
    except (BTSError, FloatingPointError, np.linalg.LinAlgError):
        return -math.inf
    if ev["k"] is None or not np.isfinite(ev["loglik"]):
        return -math.inf
    return ev["loglik"] + sum(log_prior_terms(h, alpha, ev["k"], ev["xi"], config).values())


@dataclass
class PosteriorSample:
    h: np.ndarray
    alpha: np.ndarray
    thetas: np.ndarray
    mode_counts: np.ndarray
    kde_mode_counts: np.ndarray
    basis: SplineBasis = field(repr=False)
    acceptance_rate: float = float("nan")
    config: ExploreConfig | None = None

    @property
    def size(self) -> int:
        return int(self.h.size)

    def frequencies(self) -> dict[int, float]:
        counts = Counter(int(k) for k in self.mode_counts)
        return {k: counts[k] / self.size for k in sorted(counts)}


def bts0(mode_counts) -> int:
    """Most frequent modality; ties go to the smaller count."""
    counts = Counter(int(k) for k in np.atleast_1d(mode_counts))
    if not counts:
        raise ValueError("no draws")
    best = max(counts.values())
    return min(k for k, c in counts.items() if c == best)


def default_config(sample, discretised: bool = False, model: ExploreModel | None = None, **overrides) -> ExploreConfig:
    mu_h, sigma_h, beta, lam = tune_hyperparams(sample, discretised, model)
    return ExploreConfig(mu_h=mu_h, sigma_h=sigma_h, beta_alpha=beta, lambda_xi=lam,
                         discretised=discretised, **overrides)


def run_exploration(sample, config: ExploreConfig | None = None, model: ExploreModel | None = None,
                    discretised: bool = False) -> PosteriorSample:
    """MAP-initialised random-walk Metropolis over ``(log h, probit alpha)``."""
    if model is None:
        kw = {} if config is None else dict(dimension=config.dimension, degree=config.degree,
                                            grid_size=config.grid_size,
                                            outlier_threshold=config.outlier_threshold)
        model = ExploreModel(sample, **kw)
    if config is None:
        config = default_config(sample, discretised, model)

    def log_density(p):
        return explore_log_posterior(model, p[0], p[1], config)

    target = TransformedTarget(log_density, [LogTransform(), ProbitTransform()])
    init = np.array([math.exp(config.mu_h), config.beta_alpha / (config.beta_alpha + 1.0)])
    if not np.isfinite(log_density(init)):
        init[1] = 0.9
    start = map_estimate(target, init)
    burn_in = config.steps // 5 if config.burn_in is None else config.burn_in
    thin = max(1, round((config.steps - burn_in) / config.target_draws))

    def record(p):
        ev = model.evaluate(p[0], p[1])
        return ev["theta"], ev["k"], ev["kde_modes"]

    chain = rw_metropolis(target, start, config.steps, config.proposal_scale, seed=config.seed,
                          burn_in=burn_in, thin=thin, record=record)
    h, alpha = chain.draws[:, 0], chain.draws[:, 1]
    thetas = np.array([e[0] for e in chain.extras])
    modes = np.array([e[1] for e in chain.extras], dtype=int)
    kde_counts = np.array([e[2] for e in chain.extras], dtype=int)
    return PosteriorSample(h, alpha, thetas, modes, kde_counts, model.basis, chain.acceptance_rate, config)
