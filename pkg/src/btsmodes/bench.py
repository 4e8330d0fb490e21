"""Simulation harness: test-bed mixtures, comparison estimators, McNemar
comparisons and Kemeny-median rank aggregation."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import BracketFailure, BTSError, EmDivergence, UnknownTestbed
from .kde import (DEFAULT_OUTLIER_THRESHOLD, as_sample, count_kde_modes, critical_bandwidth,
                  filter_outliers, select_bandwidth)

log = logging.getLogger(__name__)

TRUE_MODES = 3


@dataclass(frozen=True)
class MixtureSpec:
    name: str
    means: tuple[float, ...]
    variances: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.means) == len(self.variances) == len(self.weights)):
            raise ValueError("mixture parameter lengths differ")
        if min(self.variances) <= 0:
            raise ValueError("variances must be positive")
        if min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")

    @property
    def components(self) -> int:
        return len(self.means)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(np.asarray(self.weights) * stats.norm.pdf(x, self.means, np.sqrt(self.variances)), axis=-1)

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(np.asarray(self.weights) * stats.norm.cdf(x, self.means, np.sqrt(self.variances)), axis=-1)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))


TESTBEDS = {
    "M21": MixtureSpec("M21", (0.26, 0.79145, 0.5), (0.01476, 0.01, 0.007), (0.45, 0.33, 0.22)),
    "M22": MixtureSpec("M22", (0.6, 0.10245, 0.93), (0.01588, 0.0025, 0.0015), (0.68, 0.22, 0.1)),
    "M23": MixtureSpec("M23", (0.25, 0.6, 0.95222), (0.015, 0.015, 0.00049), (0.45, 0.45, 0.1)),
    "M24": MixtureSpec("M24", (0.5, 0.3, 0.5, 0.7), (0.08425, 0.004, 0.004, 0.004), (0.55, 0.15, 0.15, 0.15)),
    "M25": MixtureSpec("M25", (0.7749, 0.1345, 0.36), (0.011, 0.006, 0.006), (0.6, 0.2, 0.2)),
}


def testbed(name: str) -> MixtureSpec:
    try:
        return TESTBEDS[name]
    except KeyError:
        raise UnknownTestbed(f"unknown test-bed {name!r}; known: {sorted(TESTBEDS)}") from None


def sample_mixture(spec: MixtureSpec, n: int, seed: int) -> np.ndarray:
    """``n`` iid draws: a component by weight, then a Gaussian draw from it."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.components, n, p=spec.weights)
    return rng.normal(np.asarray(spec.means)[comp], np.sqrt(spec.variances)[comp])


def _count_grid_maxima(values: np.ndarray) -> int:
    step = np.diff(values)
    nz = step[step != 0]
    if nz.size == 0:
        return 1
    sg = np.sign(nz)
    return int(np.count_nonzero((sg[:-1] > 0) & (sg[1:] < 0))) + int(sg[0] < 0) + int(sg[-1] > 0)


def mixture_mode_count(spec: MixtureSpec, points: int = 200_001) -> int:
    sd = np.sqrt(spec.variances)
    lo = min(m - 8 * s for m, s in zip(spec.means, sd))
    hi = max(m + 8 * s for m, s in zip(spec.means, sd))
    return _count_grid_maxima(spec.pdf(np.linspace(lo, hi, points)))


# comparison methods -----------------------------------------------------------

def _filtered(x: np.ndarray, threshold: float) -> np.ndarray:
    return filter_outliers(x, select_bandwidth(x, 0), threshold) if threshold > 0 else x


def method_pi_count(sample, r: int = 0, outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> int:
    """Number of modes of the KDE with the order-``r`` plug-in bandwidth."""
    x = _filtered(as_sample(sample), outlier_threshold)
    return count_kde_modes(x, select_bandwidth(x, r))


@dataclass
class GaussianMixtureFit:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: float

    @property
    def components(self) -> int:
        return self.weights.size

    def bic(self, n: int) -> float:
        return -2.0 * self.loglik + (3 * self.components - 1) * math.log(n)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * stats.norm.pdf(x, self.means, np.sqrt(self.variances)), axis=-1)


def _em(x, means, variances, weights, max_iter=500, tol=1e-6, var_floor=1e-8):
    """EM iterations until the mean per-point log-likelihood moves less than ``tol``."""
    ll_old = -np.inf
    for _ in range(max_iter):
        logp = (np.log(weights) - 0.5 * np.log(2 * np.pi * variances)
                - 0.5 * (x[:, None] - means) ** 2 / variances)
        top = logp.max(axis=1)
        norm = top + np.log(np.exp(logp - top[:, None]).sum(axis=1))
        ll = float(norm.sum())
        if not np.isfinite(ll):
            raise EmDivergence("non-finite log-likelihood")
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8):
            raise EmDivergence("a component lost all its mass")
        weights = nk / x.size
        means = resp.T @ x / nk
        variances = np.einsum("ik,ik->k", resp, (x[:, None] - means) ** 2) / nk
        if np.any(variances < var_floor):
            raise EmDivergence("variance collapse")
        if abs(ll - ll_old) <= tol * x.size:
            break
        ll_old = ll
    logp = (np.log(weights) - 0.5 * np.log(2 * np.pi * variances)
            - 0.5 * (x[:, None] - means) ** 2 / variances)
    return GaussianMixtureFit(weights, means, variances, float(logsumexp(logp, axis=1).sum()))


def fit_gaussian_mixture(sample, k: int, restarts: int = 10, seed: int = 0) -> GaussianMixtureFit:
    """Best of ``restarts`` EM runs; the first starts from evenly spaced quantiles."""
    x = np.asarray(sample, dtype=float)
    rng = np.random.default_rng(seed)
    floor = 1e-6 * float(np.var(x))
    best, last_err = None, None
    for attempt in range(restarts):
        if attempt == 0:
            q = (np.arange(k) + 0.5) / k
        else:
            q = np.sort(rng.uniform(0, 1, k))
        means = np.quantile(x, q)
        variances = np.full(k, np.var(x) / k**2 + floor)
        weights = np.full(k, 1.0 / k)
        try:
            fit = _em(x, means, variances, weights, var_floor=floor)
        except EmDivergence as err:
            last_err = err
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise EmDivergence(f"EM failed for K={k}: {last_err}")
    return best


def method_gm_bic(sample, k_max: int = 9, restarts: int = 10, seed: int = 0,
                  outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> int:
    """Mode count of the BIC-selected Gaussian mixture (K = 1..k_max)."""
    x = _filtered(as_sample(sample), outlier_threshold)
    best = None
    for k in range(1, k_max + 1):
        try:
            fit = fit_gaussian_mixture(x, k, restarts, seed + k)
        except EmDivergence:
            continue
        if best is None or fit.bic(x.size) < best.bic(x.size):
            best = fit
    if best is None:
        raise EmDivergence("no mixture could be fitted")
    sd = np.sqrt(best.variances)
    grid = np.linspace(min(best.means - 6 * sd), max(best.means + 6 * sd), 20_001)
    return _count_grid_maxima(best.pdf(grid))


def method_silverman(sample, alpha_level: float = 0.05, B: int = 500, seed: int = 0,
                     outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD, k_max: int = 20) -> int:
    """Smallest k that the critical-bandwidth test does not reject.

    Bootstrap samples are drawn from the KDE at ``h_crit(k)`` with variance
    rescaling; the p-value is the fraction of bootstrap KDEs (same bandwidth)
    with more than ``k`` modes.
    """
    x = _filtered(as_sample(sample), outlier_threshold)
    rng = np.random.default_rng(seed)
    mean, var = x.mean(), x.var()
    for k in range(1, k_max + 1):
        try:
            h = critical_bandwidth(x, k)
        except BracketFailure:
            return k
        scale = 1.0 / math.sqrt(1.0 + h * h / var)
        exceed = 0
        for _ in range(B):
            y = x[rng.integers(0, x.size, x.size)] + h * rng.standard_normal(x.size)
            y = mean + (y - mean) * scale
            exceed += count_kde_modes(y, h) > k
        if exceed / B >= alpha_level:
            return k
    return k_max


# comparisons and rankings -----------------------------------------------------

def mcnemar(outcomes_a, outcomes_b) -> float:
    """Two-sided McNemar p-value (exact binomial below 25 discordant pairs)."""
    a = np.asarray(outcomes_a, dtype=bool)
    b = np.asarray(outcomes_b, dtype=bool)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("outcome vectors must be non-empty and of equal length")
    n01 = int(np.sum(a & ~b))
    n10 = int(np.sum(~a & b))
    total = n01 + n10
    if total == 0:
        return 1.0
    if total < 25:
        return float(min(1.0, 2.0 * stats.binom.cdf(min(n01, n10), total, 0.5)))
    chi2 = (abs(n01 - n10) - 1.0) ** 2 / total
    return float(stats.chi2.sf(chi2, 1))


def pairwise_matrix(outcomes: dict[str, np.ndarray], alpha_level: float = 0.01):
    """Emond-Mason score matrix of the "ranked ahead" relation.

    ``S[i, j] = 1`` when method i is ahead of or tied with j, ``-1`` when it
    is behind; i is ahead only when more accurate and McNemar-significant.
    Pairs with missing outcomes (None/NaN) are compared on their common runs.
    """
    names = list(outcomes)
    mat = np.zeros((len(names), len(names)))
    pvals = np.ones_like(mat)
    for i, j in itertools.combinations(range(len(names)), 2):
        a = np.asarray(outcomes[names[i]], dtype=float)
        b = np.asarray(outcomes[names[j]], dtype=float)
        ok = np.isfinite(a) & np.isfinite(b)
        if not ok.any():
            mat[i, j] = mat[j, i] = 1.0
            continue
        p = mcnemar(a[ok] > 0.5, b[ok] > 0.5)
        pvals[i, j] = pvals[j, i] = p
        acc_a, acc_b = a[ok].mean(), b[ok].mean()
        if p < alpha_level and acc_a != acc_b:
            mat[i, j] = 1.0 if acc_a > acc_b else -1.0
            mat[j, i] = -mat[i, j]
        else:
            mat[i, j] = mat[j, i] = 1.0
    return names, mat, pvals


def score_matrix(ranks) -> np.ndarray:
    """Emond-Mason score matrix of one weak order given as ranks (smaller is better)."""
    r = np.asarray(ranks, dtype=float)
    mat = np.where(r[:, None] <= r[None, :], 1.0, -1.0)
    np.fill_diagonal(mat, 0.0)
    return mat


def weak_orders(m: int):
    """All weak orders of ``m`` items as dense rank tuples starting at 1."""
    for ranks in itertools.product(range(m), repeat=m):
        used = set(ranks)
        if used == set(range(len(used))):
            yield tuple(r + 1 for r in ranks)


def kemeny_median(total_score: np.ndarray, exact_limit: int = 5) -> np.ndarray:
    """Weak order maximising agreement with a summed score matrix.

    Exhaustive for up to ``exact_limit`` items; multiple optima are averaged
    component-wise. Larger problems fall back to ranking by mean score.
    """
    m = total_score.shape[0]
    if m > exact_limit:
        row = total_score.sum(axis=1)
        order = -np.round(row, 12)
        return stats.rankdata(order, method="dense").astype(float)
    best, winners = -np.inf, []
    for ranks in weak_orders(m):
        val = float(np.sum(total_score * score_matrix(ranks)))
        if val > best + 1e-12:
            best, winners = val, [ranks]
        elif abs(val - best) <= 1e-12:
            winners.append(ranks)
    return np.mean(np.array(winners, dtype=float), axis=0)


def rank_methods(outcomes: dict[str, np.ndarray], alpha_level: float = 0.01) -> dict[str, float]:
    names, mat, _ = pairwise_matrix(outcomes, alpha_level)
    return dict(zip(names, kemeny_median(mat).tolist()))


def aggregate_rankings(rankings: list[dict[str, float]]) -> dict[str, float]:
    """Kemeny consensus of several rankings over the same methods."""
    if not rankings:
        raise ValueError("no rankings to aggregate")
    names = list(rankings[0])
    total = sum(score_matrix([r[n] for n in names]) for r in rankings)
    return dict(zip(names, kemeny_median(total).tolist()))


# harness ------------------------------------------------------------------------

BTS_METHODS = ("BTS0", "BTS1S", "BTS1J", "BTS1U", "BTS2S", "BTS2J", "BTS2U")
OTHER_METHODS = ("PI0", "PI1", "PI2", "GM", "SI")
ALL_METHODS = BTS_METHODS + OTHER_METHODS
_VARIANT = {"S": "sample", "J": "jeffreys", "U": "uniform"}


@dataclass
class BenchConfig:
    testbeds: tuple[str, ...] = ("M21", "M25")
    sizes: tuple[int, ...] = (100, 400)
    replications: int = 20
    methods: tuple[str, ...] = ("BTS2U", "PI0", "GM")
    seed: int = 0
    workers: int = 1
    alpha_level: float = 0.01
    bts_steps: int = 4375
    bts_dimension: int = 22
    si_bootstrap: int = 500

    def __post_init__(self):
        for t in self.testbeds:
            testbed(t)
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.replications < 1 or any(n < 2 for n in self.sizes):
            raise ValueError("need replications >= 1 and sizes >= 2")


def cell_seed(master: int, name: str, n: int, rep: int) -> int:
    """Seed of one replication cell, independent of scheduling order."""
    key = zlib.crc32(f"{name}|{n}|{rep}".encode())
    return int(np.random.SeedSequence([master, key]).generate_state(1)[0])


def _run_cell(args):
    config, name, n, rep = args
    seed = cell_seed(config.seed, name, n, rep)
    x = sample_mixture(testbed(name), n, seed)
    out = {}
    need_bts = [m for m in config.methods if m in BTS_METHODS]
    if need_bts:
        from .pipeline.report import run_bts

        try:
            rep_ = run_bts(x, seed=seed % (2**31), steps=config.bts_steps, dimension=config.bts_dimension)
            for m in need_bts:
                if m == "BTS0":
                    out[m] = rep_.bts0
                else:
                    probs = (rep_.probabilities if m[3] == "1" else rep_.refined_by_variant)[_VARIANT[m[4]]]
                    best = max(probs.values())
                    out[m] = min(k for k, p in probs.items() if p == best)
        except (BTSError, np.linalg.LinAlgError, ValueError, FloatingPointError) as err:
            log.warning("BTS failed on %s n=%d rep=%d: %s", name, n, rep, err)
            for m in need_bts:
                out[m] = None
    for m in config.methods:
        if m in BTS_METHODS:
            continue
        try:
            if m.startswith("PI"):
                out[m] = method_pi_count(x, int(m[2]))
            elif m == "GM":
                out[m] = method_gm_bic(x, seed=seed % (2**31))
            else:
                out[m] = method_silverman(x, B=config.si_bootstrap, seed=seed % (2**31))
        except (BTSError, np.linalg.LinAlgError, ValueError, FloatingPointError) as err:
            log.warning("%s failed on %s n=%d rep=%d: %s", m, name, n, rep, err)
            out[m] = None
    return name, n, rep, out


@dataclass
class BenchResult:
    config: BenchConfig
    rows: list[dict] = field(default_factory=list)
    accuracies: dict[str, dict[str, float]] = field(default_factory=dict)
    pvalues: dict[str, list[list[float]]] = field(default_factory=dict)
    rankings: dict[str, dict[str, float]] = field(default_factory=dict)
    global_ranking: dict[str, float] = field(default_factory=dict)

    def outcomes(self, name: str, n: int) -> dict[str, np.ndarray]:
        out = {}
        for m in self.config.methods:
            vals = [r["outcome"] for r in self.rows if r["testbed"] == name and r["n"] == n and r["method"] == m]
            out[m] = np.array([np.nan if v is None else v for v in vals], dtype=float)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["method", "testbed", "n", "rep", "k_hat", "outcome"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "accuracies": self.accuracies,
            "pvalues": self.pvalues,
            "rankings": self.rankings,
            "global_ranking": self.global_ranking,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def config_key(name: str, n: int) -> str:
    return f"{name}/{n}"


def summarise(config: BenchConfig, rows: list[dict]) -> BenchResult:
    res = BenchResult(config, rows)
    for name in config.testbeds:
        for n in config.sizes:
            key = config_key(name, n)
            outc = res.outcomes(name, n)
            res.accuracies[key] = {m: (float(np.nanmean(v)) if np.isfinite(v).any() else float("nan"))
                                   for m, v in outc.items()}
            names, mat, pv = pairwise_matrix(outc, config.alpha_level)
            res.pvalues[key] = pv.tolist()
            res.rankings[key] = dict(zip(names, kemeny_median(mat).tolist()))
    res.global_ranking = aggregate_rankings(list(res.rankings.values()))
    return res


def run_benchmark(config: BenchConfig) -> BenchResult:
    """Execute every (test-bed, size, replication) cell and summarise."""
    cells = [(config, name, n, rep) for name in config.testbeds for n in config.sizes
             for rep in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows = []
    for name, n, rep, est in sorted(results, key=lambda r: (config.testbeds.index(r[0]), r[1], r[2])):
        for m in config.methods:
            k = est[m]
            rows.append({"method": m, "testbed": name, "n": n, "rep": rep, "k_hat": k,
                         "outcome": None if k is None else int(k == TRUE_MODES)})
    missing = sum(r["k_hat"] is None for r in rows)
    if missing:
        warnings.warn(f"{missing} method runs failed and are excluded pairwise", RuntimeWarning)
    return summarise(config, rows)
