"""Testing stage: Savage-Dickey significance of each mode in its excess mass region."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq
from scipy.special import logsumexp

from ..splines import CompositionalSpline, ModeSet, spline_modes

TAU_MAX = 20.0
TAU_NODES = 2048


@dataclass(frozen=True)
class ExcessMassRegion:
    lo: float
    hi: float
    eta: float  # cut height on the density scale
    mode: float


@dataclass
class ModeTestResult:
    region: ExcessMassRegion
    n_region: int
    prior_odds: float
    posterior_at_zero: float  # p(tau = 0 | D), nan when undefined
    prob_exists: float

    def to_dict(self) -> dict:
        return {
            "region": [self.region.lo, self.region.hi],
            "eta": self.region.eta,
            "mode": self.region.mode,
            "n_region": self.n_region,
            "prior_odds": self.prior_odds,
            "posterior_at_zero": self.posterior_at_zero,
            "prob_exists": self.prob_exists,
        }


def excess_mass_regions(spline: CompositionalSpline, modes: ModeSet | None = None) -> list[ExcessMassRegion]:
    """Level sets ``{f >= eta_i}`` of each modal region.

    ``eta_i`` is the larger density value at the ends of the modal region,
    ignoring an end that is the mode itself.
    """
    modes = spline_modes(spline) if modes is None else modes
    out = []
    for m, (lo, hi) in zip(modes.modes, modes.modal_regions):
        ends = [e for e in (lo, hi) if e != m]
        if not ends:  # k = 1 with the mode on both ends cannot happen on a proper interval
            ends = [lo, hi]
        clr_ends = spline.clr(np.array(ends))
        c_eta = float(clr_ends.max())
        c_mode = float(spline.clr(m))

        def gap(t):
            return float(spline.clr(t)) - c_eta

        left = lo if (m == lo or spline.clr(lo) >= c_eta) else brentq(gap, lo, m, xtol=1e-12 * (hi - lo))
        right = hi if (m == hi or spline.clr(hi) >= c_eta) else brentq(gap, m, hi, xtol=1e-12 * (hi - lo))
        if not c_mode > c_eta:
            left = right = m
        out.append(ExcessMassRegion(float(left), float(right), float(math.exp(c_eta - spline.log_normalizer)), float(m)))
    return out


def tau_grid(tau_max: float = TAU_MAX, nodes: int = TAU_NODES) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-6, tau_max, nodes - 1)])


def tau_log_posterior(spline: CompositionalSpline, region: ExcessMassRegion, data, tau):
    """Unnormalised log posterior of τ (Exp(1) prior) for data in the region.

    The model on the region is ``f^tau`` renormalised; clr values are shifted
    by the value at the mode so that every exponent is ``<= 0``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    x = np.asarray(data, dtype=float)
    c_top = float(spline.clr(region.mode))
    u_data = spline.clr(x) - c_top
    qx, qw = spline.basis.quadrature(region.lo, region.hi)
    u_nodes = np.minimum(spline.clr(qx) - c_top, 0.0)
    log_z = logsumexp(tau[:, None] * u_nodes[None, :], b=qw[None, :], axis=1)
    return tau * u_data.sum() - x.size * log_z - tau


def tau_posterior(spline: CompositionalSpline, region: ExcessMassRegion, data,
                  tau_max: float = TAU_MAX, nodes: int = TAU_NODES):
    """Normalised τ posterior on a log-spaced grid, extended while the tail is not negligible."""
    while True:
        t = tau_grid(tau_max, nodes)
        lp = tau_log_posterior(spline, region, data, t)
        if lp[-1] - lp.max() < -30.0 or tau_max >= 1e4:
            break
        tau_max *= 4.0
    dens = np.exp(lp - lp.max())
    dens /= trapezoid(dens, t)
    return t, dens


def test_mode(sample, spline: CompositionalSpline, region: ExcessMassRegion,
              prior_odds: float = 1.0) -> ModeTestResult:
    """Posterior probability that the mode in ``region`` exists (Savage-Dickey)."""
    if prior_odds < 0:
        raise ValueError("prior odds must be non-negative")
    x = np.asarray(sample, dtype=float)
    inside = x[(x >= region.lo) & (x <= region.hi)]
    if inside.size == 0 or prior_odds == 0 or region.hi <= region.lo:
        return ModeTestResult(region, int(inside.size), prior_odds, float("nan"), 0.0)
    t, dens = tau_posterior(spline, region, inside)
    p0 = float(dens[0])
    return ModeTestResult(region, int(inside.size), prior_odds, p0, 1.0 / (1.0 + p0 / prior_odds))


def test_all_modes(sample, spline: CompositionalSpline, prior_odds=1.0) -> list[ModeTestResult]:
    regions = excess_mass_regions(spline)
    odds = np.broadcast_to(np.asarray(prior_odds, dtype=float), (len(regions),))
    return [test_mode(sample, spline, r, float(o)) for r, o in zip(regions, odds)]


def harmonic_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    if np.any(v <= 0):
        return 0.0
    return float(v.size / np.sum(1.0 / v))


def mixture_significance(tests: list[ModeTestResult]) -> float:
    """``[1 + p(tau=0 | k, D) / O(H1 | k)]^-1`` from the odds-weighted mixture of τ posteriors.

    Equals the harmonic mean of the per-mode probabilities whenever all
    of them are positive.
    """
    odds0 = np.array([1.0 / t.prior_odds for t in tests])
    w = odds0 / odds0.sum()
    p0 = float(np.sum(w * np.array([t.posterior_at_zero for t in tests])))
    odds_k = len(tests) / odds0.sum()
    return 1.0 / (1.0 + p0 / odds_k)


def aggregate_and_refine(probabilities: dict[int, float], tests: dict[int, list[ModeTestResult]]):
    """Refined probabilities ``Pr(k | H1, D)`` and the significance score per k."""
    scores = {}
    for k, p in probabilities.items():
        if p > 0:
            scores[k] = harmonic_mean([t.prob_exists for t in tests[k]])
        else:
            scores[k] = 0.0
    raw = {k: scores[k] * probabilities[k] for k in probabilities}
    total = sum(raw.values())
    refined = {k: v / total for k, v in raw.items()} if total > 0 else dict(probabilities)
    return refined, scores


def savage_dickey_mcmc_check(sample, spline: CompositionalSpline, region: ExcessMassRegion,
                             steps: int = 20000, seed: int = 0):
    """Compare quadrature and random-walk MCMC for the τ posterior.

    Returns ``(p_quad, p_mcmc, mc_se)`` for the posterior probability that
    τ lies below the quadrature median (so ``p_quad`` is 0.5 by design).
    """
    from ..inference import LogTransform, TransformedTarget, effective_sample_size, rw_metropolis

    x = np.asarray(sample, dtype=float)
    inside = x[(x >= region.lo) & (x <= region.hi)]
    t, dens = tau_posterior(spline, region, inside)
    cdf = cumulative_trapezoid(dens, t, initial=0.0)
    eps = float(np.interp(0.5, cdf, t))
    p_quad = float(np.interp(eps, t, cdf))

    def logp(p):
        return float(tau_log_posterior(spline, region, inside, p[0])[0])

    target = TransformedTarget(logp, [LogTransform()])
    init = np.array([max(eps, 1e-3)])
    chain = rw_metropolis(target, init, steps, 1.0, seed=seed)
    below = (chain.draws[:, 0] < eps).astype(float)
    p_mc = float(below.mean())
    ess = effective_sample_size(below)
    se = math.sqrt(max(p_mc * (1 - p_mc), 1e-12) / max(ess, 1.0))
    return p_quad, p_mc, se
