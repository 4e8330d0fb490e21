"""Selection stage: encompassing-prior Bayes factors over the SFPCA parameter."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import DegenerateFlat
from ..inference import simpson_weights
from ..splines import CompositionalSpline, count_modes
from .analyze import ModalityPartition, SfpcaModel, jeffreys_prior, sfpca_density

PRIOR_VARIANTS = ("sample", "jeffreys", "uniform")
MIN_PRIOR_MASS = 1e-12


@dataclass
class ModalityHypothesis:
    k: int
    delta_set: list[tuple[float, float]]
    prior_mass: float
    posterior_mass: float
    posterior_prob: float
    median_delta: float
    median_spline: CompositionalSpline

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "delta_set": [list(iv) for iv in self.delta_set],
            "prior_mass": self.prior_mass,
            "posterior_mass": self.posterior_mass,
            "posterior_prob": self.posterior_prob,
            "median_delta": self.median_delta,
            "median_theta": self.median_spline.theta.tolist(),
        }


@dataclass
class DeltaPosterior:
    """Prior and posterior of δ tabulated on Simpson nodes, piece by piece."""

    pieces: list[tuple[float, float, int]]
    nodes: list[np.ndarray]
    weights: list[np.ndarray]
    log_prior: list[np.ndarray]  # normalised over the support
    log_post: list[np.ndarray]  # normalised over the support

    def mass(self, which: str, index: int) -> float:
        vals = self.log_prior if which == "prior" else self.log_post
        return float(self.weights[index] @ np.exp(vals[index]))

    def density(self, which: str = "post"):
        vals = self.log_prior if which == "prior" else self.log_post
        return np.concatenate(self.nodes), np.exp(np.concatenate(vals))


def data_statistics(model: SfpcaModel, sample) -> tuple[float, float, int]:
    """``(sum s_mu(x_i), sum s_sigma(x_i), n)`` — sufficient for the δ-likelihood."""
    x = np.asarray(sample, dtype=float)
    z = model.basis.design(x)
    return float(np.sum(z @ model.mean)), float(np.sum(z @ model.stdev)), x.size


def log_likelihood(model: SfpcaModel, delta, stats) -> np.ndarray:
    t_mu, t_sigma, n = stats
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    return t_mu + d * t_sigma - n * model.log_normalizer(d)


def delta_posterior(model: SfpcaModel, partition: ModalityPartition, sample,
                    resolution: int = 4096, min_panels: int = 64) -> DeltaPosterior:
    """Jeffreys prior and posterior of δ by composite Simpson on every piece."""
    stats = data_statistics(model, sample)
    step = model.width / resolution
    nodes, weights = [], []
    for lo, hi, _ in partition.pieces:
        panels = max(min_panels, int(math.ceil((hi - lo) / step)))
        panels += panels % 2
        x, w = simpson_weights(panels, lo, hi)
        nodes.append(x)
        weights.append(w)
    allx, allw = np.concatenate(nodes), np.concatenate(weights)
    with np.errstate(divide="ignore"):
        lp = np.log(jeffreys_prior(model, allx))
    lp -= logsumexp(lp, b=allw)
    lpost = lp + log_likelihood(model, allx, stats)
    lpost -= logsumexp(lpost, b=allw)
    cuts = np.cumsum([len(x) for x in nodes])[:-1]
    return DeltaPosterior(list(partition.pieces), nodes, weights,
                          np.split(lp, cuts), np.split(lpost, cuts))


def _merge_tiny(partition: ModalityPartition, post: DeltaPosterior):
    """Fold pieces with negligible prior mass into a neighbour (with a warning)."""
    pieces = list(partition.pieces)
    masses = [post.mass("prior", i) for i in range(len(pieces))]
    changed = False
    while len(pieces) > 1:
        tiny = [i for i, m in enumerate(masses) if m < MIN_PRIOR_MASS]
        if not tiny:
            break
        i = tiny[0]
        j = i - 1 if i > 0 else i + 1
        if 0 < i < len(pieces) - 1 and masses[i + 1] > masses[i - 1]:
            j = i + 1
        lo = min(pieces[i][0], pieces[j][0])
        hi = max(pieces[i][1], pieces[j][1])
        keep = min(i, j)
        pieces[keep] = (lo, hi, pieces[j][2])
        masses[keep] = masses[i] + masses[j]
        del pieces[max(i, j)], masses[max(i, j)]
        changed = True
    if changed:
        warnings.warn("merged δ-pieces with negligible prior mass into neighbours", RuntimeWarning)
    out = []
    for lo, hi, k in pieces:
        if out and out[-1][2] == k:
            out[-1] = (out[-1][0], hi, k)
        else:
            out.append((lo, hi, k))
    return ModalityPartition(out), changed


def prior_probabilities(variant: str, modalities: list[int], prior_masses: dict[int, float],
                        exploration_counts=None) -> dict[int, float]:
    """Pr(k) over the reachable modalities for one of the three variants."""
    if variant not in PRIOR_VARIANTS:
        raise ValueError(f"unknown prior variant {variant!r}")
    if variant == "uniform":
        raw = {k: 1.0 for k in modalities}
    elif variant == "jeffreys":
        raw = {k: prior_masses[k] for k in modalities}
    else:
        counts = np.atleast_1d(np.asarray([] if exploration_counts is None else exploration_counts))
        raw = {k: float(np.sum(counts == k)) for k in modalities}
        if sum(raw.values()) == 0:
            raw = {k: 1.0 for k in modalities}
    total = sum(raw.values())
    return {k: v / total for k, v in raw.items()}


def _median_in(post: DeltaPosterior, indices: list[int]) -> float:
    """Posterior median of δ restricted to the given pieces (trapezoid CDF on the nodes)."""
    xs, cdf_parts = [], []
    run = 0.0
    for i in indices:
        x = post.nodes[i]
        y = np.exp(post.log_post[i])
        c = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])
        xs.append(x)
        cdf_parts.append(run + c)
        run += c[-1]
    if run <= 0:
        # no posterior mass at all: fall back to the prior-free centre of the set
        x = np.concatenate(xs)
        return float(0.5 * (x.min() + x.max()))
    x = np.concatenate(xs)
    cdf = np.concatenate(cdf_parts) / run
    j = int(np.searchsorted(cdf, 0.5))
    j = min(max(j, 1), x.size - 1)
    if cdf[j] == cdf[j - 1]:
        return float(x[j])
    return float(x[j - 1] + (0.5 - cdf[j - 1]) / (cdf[j] - cdf[j - 1]) * (x[j] - x[j - 1]))


def _ensure_k_modes(model: SfpcaModel, delta: float, k: int, intervals) -> float:
    """Nudge a median towards the inside of its piece until the spline has k modes."""
    def ok(d):
        try:
            return count_modes(sfpca_density(model, d, check=False)) == k
        except DegenerateFlat:
            return False

    if ok(delta):
        return delta
    lo, hi = min(intervals, key=lambda iv: 0.0 if iv[0] <= delta <= iv[1] else min(abs(delta - iv[0]), abs(delta - iv[1])))
    centre = 0.5 * (lo + hi)
    for frac in np.linspace(0.01, 1.0, 100):
        cand = delta + frac * (centre - delta)
        if ok(cand):
            return float(cand)
    for lo, hi in intervals:
        for cand in np.linspace(lo, hi, 33)[1:-1]:
            if ok(cand):
                return float(cand)
    raise DegenerateFlat(f"no δ with exactly {k} modes found in its partition set")


@dataclass
class SelectionResult:
    partition: ModalityPartition
    posterior: DeltaPosterior
    prior_masses: dict[int, float]
    posterior_masses: dict[int, float]
    probabilities: dict[str, dict[int, float]]  # per prior variant
    hypotheses: dict[str, list[ModalityHypothesis]]


def select_modality(sample, model: SfpcaModel, partition: ModalityPartition,
                    exploration_counts=None, resolution: int = 4096) -> SelectionResult:
    """Posterior probabilities of each reachable modality for all prior variants."""
    post = delta_posterior(model, partition, sample, resolution)
    merged, changed = _merge_tiny(partition, post)
    if changed:
        partition = merged
        post = delta_posterior(model, partition, sample, resolution)
    modalities = partition.modalities
    prior_m = {k: 0.0 for k in modalities}
    post_m = {k: 0.0 for k in modalities}
    for i, (_, _, k) in enumerate(partition.pieces):
        prior_m[k] += post.mass("prior", i)
        post_m[k] += post.mass("post", i)

    medians = {}
    for k in modalities:
        idx = [i for i, p in enumerate(partition.pieces) if p[2] == k]
        med = _median_in(post, idx)
        medians[k] = _ensure_k_modes(model, med, k, partition.intervals(k))

    probs, hyps = {}, {}
    for variant in PRIOR_VARIANTS:
        pk = prior_probabilities(variant, modalities, prior_m, exploration_counts)
        score = {k: (post_m[k] / prior_m[k]) * pk[k] if prior_m[k] > 0 else 0.0 for k in modalities}
        total = sum(score.values())
        if total > 0:
            pr = {k: s / total for k, s in score.items()}
        else:
            pr = dict(pk)
        probs[variant] = pr
        hyps[variant] = [
            ModalityHypothesis(k, partition.intervals(k), prior_m[k], post_m[k], pr[k], medians[k],
                               sfpca_density(model, medians[k], check=False))
            for k in modalities
        ]
    return SelectionResult(partition, post, prior_m, post_m, probs, hyps)


def argmax_small(probs: dict[int, float]) -> int:
    """Argmax over k with ties resolved towards the smaller k."""
    best = max(probs.values())
    return min(k for k, p in probs.items() if p == best)
