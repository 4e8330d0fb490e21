"""End-to-end BTS runs and the serialisable modality report."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..errors import BTSError, StageError, ZeroVariance
from ..kde import as_sample
from ..splines import CompositionalSpline
from .analyze import SfpcaModel, modality_partition, run_sfpca
from .explore import ExploreConfig, ExploreModel, PosteriorSample, bts0, default_config, run_exploration
from .select import PRIOR_VARIANTS, ModalityHypothesis, SelectionResult, argmax_small, select_modality
from .significance import ModeTestResult, aggregate_and_refine, test_all_modes

log = logging.getLogger(__name__)

STAGES = ("explore", "analyze", "select", "test")


@dataclass
class ModalityReport:
    prior_variant: str
    bts0: int
    exploration_frequencies: dict[int, float]
    bts1: int | None = None
    bts2: int | None = None
    probabilities: dict[str, dict[int, float]] = field(default_factory=dict)
    hypotheses: list[ModalityHypothesis] = field(default_factory=list)
    tests: dict[int, list[ModeTestResult]] = field(default_factory=dict)
    significance: dict[int, float] = field(default_factory=dict)
    refined_probs: dict[int, float] = field(default_factory=dict)
    refined_by_variant: dict[str, dict[int, float]] = field(default_factory=dict)
    stages: tuple[str, ...] = STAGES
    config: dict = field(default_factory=dict)
    # heavy intermediate objects, kept for plotting; not serialised
    exploration: PosteriorSample | None = field(default=None, repr=False)
    sfpca: SfpcaModel | None = field(default=None, repr=False)
    selection: SelectionResult | None = field(default=None, repr=False)

    @property
    def posterior_probs(self) -> dict[int, float]:
        return self.probabilities.get(self.prior_variant, {})

    def to_dict(self) -> dict:
        def keyed(d):
            return {str(k): v for k, v in d.items()}

        return {
            "bts0": self.bts0,
            "bts1": self.bts1,
            "bts2": self.bts2,
            "prior_variant": self.prior_variant,
            "stages": list(self.stages),
            "exploration_frequencies": keyed(self.exploration_frequencies),
            "posterior_probs": {v: keyed(p) for v, p in self.probabilities.items()},
            "significance": keyed(self.significance),
            "refined_probs": keyed(self.refined_probs),
            "refined_by_variant": {v: keyed(p) for v, p in self.refined_by_variant.items()},
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "tests": {str(k): [t.to_dict() for t in ts] for k, ts in self.tests.items()},
            "config": self.config,
        }


@contextmanager
def _stage(name: str):
    """Re-raise numerical failures as :class:`StageError` naming the stage."""
    try:
        yield
    except StageError:
        raise
    except (BTSError, ArithmeticError, np.linalg.LinAlgError) as err:
        raise StageError(name, err) from err


def _stages_upto(stages) -> tuple[str, ...]:
    if isinstance(stages, str):
        if stages not in STAGES:
            raise ValueError(f"unknown stage {stages!r}; choose from {STAGES}")
        return STAGES[: STAGES.index(stages) + 1]
    stages = tuple(stages)
    for s in stages:
        if s not in STAGES:
            raise ValueError(f"unknown stage {s!r}")
    return stages


def run_bts(sample, config: ExploreConfig | None = None, prior_variant: str = "uniform",
            stages="test", discretised: bool = False, prior_odds=1.0,
            partition_grid: int = 512, **overrides) -> ModalityReport:
    """Run the BTS stages up to ``stages`` (a stage name or an explicit tuple).

    ``overrides`` are forwarded to :func:`default_config` when ``config`` is
    None (e.g. ``seed``, ``dimension``, ``steps``).
    """
    if prior_variant not in PRIOR_VARIANTS:
        raise ValueError(f"prior variant must be one of {PRIOR_VARIANTS}")
    stages = _stages_upto(stages)
    x = as_sample(sample)
    with _stage("explore"):
        if config is None:
            model = ExploreModel(x, dimension=overrides.get("dimension", 22), degree=overrides.get("degree", 3),
                                 grid_size=overrides.get("grid_size", 1001))
            config = default_config(x, discretised, model, **overrides)
        else:
            model = ExploreModel(x, config.dimension, config.degree, config.grid_size, config.outlier_threshold)
        ps = run_exploration(x, config, model)
    report = ModalityReport(prior_variant, bts0(ps.mode_counts), ps.frequencies(), stages=stages,
                            config=config.to_dict(), exploration=ps)
    if "analyze" not in stages:
        return report

    with _stage("analyze"):
        try:
            sf = run_sfpca(ps.thetas, ps.basis, ps.mode_counts)
        except ZeroVariance:
            log.info("exploration splines coincide; single modality %d", report.bts0)
            sf = None
    report.sfpca = sf
    if "select" not in stages:
        return report

    with _stage("select"):
        if sf is None:
            k = report.bts0
            spline = CompositionalSpline(ps.basis, ps.thetas[0])
            report.probabilities = {v: {k: 1.0} for v in PRIOR_VARIANTS}
            report.hypotheses = [ModalityHypothesis(k, [(0.0, 0.0)], 1.0, 1.0, 1.0, 0.0, spline)]
        else:
            part = modality_partition(sf, partition_grid)
            sel = select_modality(x, sf, part, ps.mode_counts)
            report.selection = sel
            report.probabilities = sel.probabilities
            report.hypotheses = sel.hypotheses[prior_variant]
    report.bts1 = argmax_small(report.posterior_probs)
    if "test" not in stages:
        return report

    with _stage("test"):
        # median splines do not depend on the prior variant, so one test per k suffices
        report.tests = {h.k: test_all_modes(x, h.median_spline, prior_odds) for h in report.hypotheses}
        for variant, probs in report.probabilities.items():
            refined, scores = aggregate_and_refine(probs, report.tests)
            report.refined_by_variant[variant] = refined
            if variant == prior_variant:
                report.refined_probs = refined
                report.significance = scores
    report.bts2 = argmax_small(report.refined_probs)
    return report
