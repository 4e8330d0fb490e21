import numpy as np
import pytest

from btsmodes.bayes_space import Interval
from btsmodes.bench import sample_mixture, testbed
from btsmodes.splines import CompositionalSpline, SplineBasis


@pytest.fixture
def unit():
    return Interval(0.0, 1.0)


@pytest.fixture
def basis(unit):
    return SplineBasis(unit, degree=3, dimension=12)


def random_spline(basis, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return CompositionalSpline(basis, scale * rng.standard_normal(basis.dimension))


@pytest.fixture(scope="session")
def m25_sample():
    """The M25 fixture: n = 200 draws, seed 0 (fixed before looking at results)."""
    return sample_mixture(testbed("M25"), 200, seed=0)


@pytest.fixture(scope="session")
def m25_report(m25_sample):
    from btsmodes.pipeline.report import run_bts

    return run_bts(m25_sample, seed=0)
