"""Generic Bayesian machinery: transforms, MAP search, random-walk Metropolis,
Simpson quadrature and the deviance information criterion."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from .errors import InitInvalid, NonFinite

log = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# transforms ------------------------------------------------------------------

class Transform:
    """Bijection from an unconstrained real line onto a parameter's support."""

    def forward(self, u):  # unconstrained -> constrained
        raise NotImplementedError

    def inverse(self, x):  # constrained -> unconstrained
        raise NotImplementedError

    def log_jacobian(self, u):
        """``log |dx/du|`` at unconstrained ``u``."""
        raise NotImplementedError


class Identity(Transform):
    def forward(self, u):
        return u

    def inverse(self, x):
        return x

    def log_jacobian(self, u):
        return 0.0 * np.asarray(u, dtype=float)


class LogTransform(Transform):
    """Positive parameters: ``x = exp(u)``."""

    def forward(self, u):
        return np.exp(u)

    def inverse(self, x):
        return np.log(x)

    def log_jacobian(self, u):
        return np.asarray(u, dtype=float)


class ProbitTransform(Transform):
    """Parameters in ``(lo, hi)``: ``x = lo + (hi - lo) * Phi(u)``."""

    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        if not lo < hi:
            raise ValueError("need lo < hi")
        self.lo = lo
        self.hi = hi

    def forward(self, u):
        return self.lo + (self.hi - self.lo) * ndtr(u)

    def inverse(self, x):
        return ndtri((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo))

    def log_jacobian(self, u):
        u = np.asarray(u, dtype=float)
        return math.log(self.hi - self.lo) - 0.5 * u * u - _HALF_LOG_2PI


@dataclass
class TransformedTarget:
    """A log density on constrained parameters together with per-coordinate transforms."""

    log_density: Callable[[np.ndarray], float]
    transforms: Sequence[Transform]

    @property
    def dimension(self) -> int:
        return len(self.transforms)

    def to_constrained(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.array([t.forward(ui) for t, ui in zip(self.transforms, u)], dtype=float)

    def to_unconstrained(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([t.inverse(xi) for t, xi in zip(self.transforms, x)], dtype=float)

    def log_density_unconstrained(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = self.to_constrained(u)
        val = self.log_density(x)
        if not np.isfinite(val):
            return -np.inf
        return float(val + sum(float(t.log_jacobian(ui)) for t, ui in zip(self.transforms, u)))


# MAP ---------------------------------------------------------------------------

def map_estimate(target: TransformedTarget, init, max_iters: int = 400) -> np.ndarray:
    """Nelder-Mead ascent of the log density in unconstrained coordinates.

    Returns a constrained point whose log density is at least that of ``init``.
    When no improvement is found, ``init`` comes back and a warning is issued.
    """
    u0 = target.to_unconstrained(init)
    f0 = target.log_density_unconstrained(u0)
    if not np.isfinite(f0):
        raise InitInvalid("initial point has zero density")

    def neg(u):
        val = target.log_density_unconstrained(u)
        return 1e300 if not np.isfinite(val) else -val

    res = minimize(neg, u0, method="Nelder-Mead",
                   options={"maxiter": max_iters, "xatol": 1e-8, "fatol": 1e-10,
                            "initial_simplex": u0 + np.vstack([np.zeros(u0.size), 0.25 * np.eye(u0.size)])})
    if -res.fun < f0 or not np.all(np.isfinite(res.x)):
        warnings.warn("MAP search found no improvement; returning the initial point", RuntimeWarning)
        return np.atleast_1d(np.asarray(init, dtype=float))
    return target.to_constrained(res.x)


# random-walk Metropolis --------------------------------------------------------

@dataclass
class Chain:
    draws: np.ndarray  # (n_draws, dim), constrained coordinates
    log_densities: np.ndarray
    acceptance_rate: float
    seed: int
    proposal_scales: np.ndarray
    extras: list = field(default_factory=list)

    def __len__(self):
        return self.draws.shape[0]


def rw_metropolis(target: TransformedTarget, init, steps: int, proposal_scales=0.25,
                  seed: int = 0, burn_in: int | None = None, thin: int = 1, adapt: bool = True,
                  record: Callable[[np.ndarray], object] | None = None) -> Chain:
    """Gaussian random-walk Metropolis in unconstrained coordinates.

    Proposal scales are tuned once, at the end of burn-in, when the burn-in
    acceptance rate falls outside [0.2, 0.5]; the retained part of the chain
    uses a fixed kernel. ``record`` is called on every retained constrained
    draw and its results are stored in ``Chain.extras``.
    """
    if burn_in is None:
        burn_in = steps // 5
    if not steps > burn_in >= 0:
        raise ValueError("need steps > burn_in >= 0")
    rng = np.random.default_rng(seed)
    u = target.to_unconstrained(init)
    dim = u.size
    scales = np.broadcast_to(np.asarray(proposal_scales, dtype=float), (dim,)).copy()
    if np.any(scales <= 0):
        raise ValueError("proposal scales must be positive")
    lp = target.log_density_unconstrained(u)
    if not np.isfinite(lp):
        raise InitInvalid("initial point has zero density")

    noise = rng.standard_normal((steps, dim))
    uniforms = rng.random(steps)
    draws, lps, extras = [], [], []
    accepted_burn = accepted_main = 0
    for i in range(steps):
        if adapt and burn_in > 0 and i == burn_in:
            rate = accepted_burn / burn_in
            if rate < 0.2 or rate > 0.5:
                # crude one-shot rescaling towards ~0.35 acceptance
                scales *= float(np.clip(math.exp(3.0 * (rate - 0.35)), 0.2, 5.0))
        prop = u + scales * noise[i]
        lp_prop = target.log_density_unconstrained(prop)
        if np.isfinite(lp_prop) and math.log(uniforms[i] + 1e-300) < lp_prop - lp:
            u, lp = prop, lp_prop
            if i < burn_in:
                accepted_burn += 1
            else:
                accepted_main += 1
        if i >= burn_in and (i - burn_in) % thin == 0:
            x = target.to_constrained(u)
            draws.append(x)
            lps.append(lp)
            if record is not None:
                extras.append(record(x))
    kept = steps - burn_in
    return Chain(np.array(draws), np.array(lps), accepted_main / kept, seed, scales, extras)


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelations (Geyer)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = xc @ xc / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 1.0
    for lag in range(1, n - 1, 2):
        pair = acf[lag] + acf[lag + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / tau)


# quadrature --------------------------------------------------------------------

def simpson_weights(n_panels: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    if n_panels < 2 or n_panels % 2:
        raise ValueError("Simpson's rule needs an even number of panels")
    x = np.linspace(a, b, n_panels + 1)
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3.0 * n_panels)


def quadrature_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, panels: int = 64) -> float:
    """Composite Simpson integral of a vectorised ``f`` over ``[a, b]``."""
    if panels < 8:
        raise ValueError("need at least 8 panels")
    panels += panels % 2
    x, w = simpson_weights(panels, a, b)
    y = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFinite("integrand is not finite on the quadrature nodes")
    return float(w @ y)


# DIC -----------------------------------------------------------------------------

def dic(chain: Chain | np.ndarray, log_likelihood: Callable[[np.ndarray], float],
        transforms: Sequence[Transform] | None = None) -> tuple[float, float]:
    """Deviance information criterion and effective number of parameters ``p_D``.

    The posterior mean is taken in unconstrained coordinates (when transforms
    are given) and mapped back before evaluating the likelihood.
    """
    draws = chain.draws if isinstance(chain, Chain) else np.atleast_2d(np.asarray(chain, dtype=float))
    if draws.ndim == 1:
        draws = draws[:, None]
    if len(draws) == 0:
        raise ValueError("empty chain")
    if transforms is None:
        center = draws.mean(axis=0)
    else:
        u = np.column_stack([t.inverse(draws[:, j]) for j, t in enumerate(transforms)])
        um = u.mean(axis=0)
        center = np.array([t.forward(v) for t, v in zip(transforms, um)])
    mean_ll = float(np.mean([log_likelihood(d) for d in draws]))
    ll_center = float(log_likelihood(center))
    p_d = 2.0 * (ll_center - mean_ll)
    return -2.0 * ll_center + 2.0 * p_d, p_d


def log_normal_pdf(x, mu: float, sigma: float):
    x = np.asarray(x, dtype=float)
    z = (np.log(x) - mu) / sigma
    return -0.5 * z * z - np.log(x * sigma) - _HALF_LOG_2PI

