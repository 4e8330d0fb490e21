"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s``; the lines are printed
even when output is captured. External datasets are looked up in the
environment variables ``BTSMODES_HIDALGO_CSV`` / ``BTSMODES_OHTANI_CSV`` or
as ``tests/data/hidalgo.csv`` / ``tests/data/ohtani.csv``; criteria that need
missing data are skipped.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from btsmodes.bench import BenchConfig, run_benchmark
from btsmodes.cli import read_sample
from btsmodes.pipeline import report as report_mod
from btsmodes.pipeline.report import run_bts
from btsmodes.pipeline.select import PRIOR_VARIANTS
from btsmodes.splines import spline_modes

HERE = Path(__file__).parent


@pytest.fixture
def verdict(capsys):
    """``verdict(n, checks)`` prints one line for criterion n and asserts every check."""

    def emit(number, checks, note=""):
        failed = [name for name, ok in checks if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = "; ".join(f"{name}={'ok' if ok else 'FAIL'}" for name, ok in checks)
        with capsys.disabled():
            print(f"\nCRITERION {number}: {status} -- {detail}{' | ' + note if note else ''}")
        assert not failed, f"criterion {number} failed: {failed}"

    return emit


def _dataset(name):
    env = os.environ.get(f"BTSMODES_{name.upper()}_CSV")
    path = Path(env) if env else HERE / "data" / f"{name}.csv"
    return path if path.is_file() else None


def _valid_probabilities(rep) -> bool:
    vectors = list(rep.probabilities.values()) + list(rep.refined_by_variant.values())
    return all(all(v >= 0 for v in p.values()) and abs(sum(p.values()) - 1.0) <= 1e-8 for p in vectors)


# -- 1. Hidalgo regression ---------------------------------------------------------------------

def test_criterion_1_hidalgo(verdict, capsys):
    path = _dataset("hidalgo")
    if path is None:
        with capsys.disabled():
            print("\nCRITERION 1: SKIPPED -- Hidalgo CSV not available (set BTSMODES_HIDALGO_CSV)")
        pytest.skip("Hidalgo data not available")
    x = read_sample(path)
    target = np.array([0.63, 0.99, 0.83, 0.96, 0.91, 0.51, 0.75])
    checks = [("n=485", x.size == 485)]
    for seed in (0, 1, 2):
        start = time.perf_counter()
        rep = run_bts(x, discretised=True, seed=seed, dimension=32)
        elapsed = time.perf_counter() - start
        sig = np.array([t.prob_exists for t in rep.tests.get(7, [])])
        checks += [
            (f"seed{seed}:bts0=7", rep.bts0 == 7),
            (f"seed{seed}:Pr(7)>=0.9", rep.posterior_probs.get(7, 0.0) >= 0.9),
            (f"seed{seed}:significance+-0.12", sig.size == 7 and bool(np.all(np.abs(sig - target) <= 0.12))),
            (f"seed{seed}:bts1=bts2=7", rep.bts1 == rep.bts2 == 7),
            (f"seed{seed}:runtime<=10min", elapsed <= 600),
            (f"seed{seed}:probabilities valid", _valid_probabilities(rep)),
        ]
    verdict(1, checks)


# -- 2. M25 fixture -----------------------------------------------------------------------------

def test_criterion_2_m25(verdict, m25_sample):
    start = time.perf_counter()
    rep = run_bts(m25_sample, seed=0)
    elapsed = time.perf_counter() - start
    freq = rep.exploration_frequencies
    left, centre, right = (t.prob_exists for t in rep.tests[3])
    checks = [
        ("k2 and k3 explored", freq.get(2, 0) > 0 and freq.get(3, 0) > 0),
        ("freq(2)+freq(3)>=0.9", freq.get(2, 0) + freq.get(3, 0) >= 0.9),
    ]
    for variant in PRIOR_VARIANTS:
        p3 = rep.probabilities[variant].get(3, 0.0)
        checks.append((f"Pr(3|D,{variant})={p3:.3f} in [0.85,0.97]", 0.85 <= p3 <= 0.97))
    checks += [
        (f"right>centre>=left ({left:.3f},{centre:.3f},{right:.3f})", right > centre >= left),
        ("right>=0.9", right >= 0.9),
        (f"runtime={elapsed:.0f}s<=300s", elapsed <= 300),
    ]
    verdict(2, checks)


# -- 3. desk benchmark ----------------------------------------------------------------------------

DESK = dict(testbeds=("M21", "M25"), sizes=(100, 400), replications=20, methods=("BTS2U", "PI0", "GM"), seed=0)


@pytest.fixture(scope="module")
def desk_bench():
    workers = min(4, os.cpu_count() or 1)
    start = time.perf_counter()
    first = run_benchmark(BenchConfig(**DESK, workers=workers))
    elapsed = time.perf_counter() - start

    # full rerun in-process (same seeds) while checking every pipeline report's probability vectors
    validity = []
    original = report_mod.run_bts

    def checked(*args, **kwargs):
        rep = original(*args, **kwargs)
        validity.append(_valid_probabilities(rep))
        return rep

    report_mod.run_bts = checked
    try:
        second = run_benchmark(BenchConfig(**DESK, workers=1))
    finally:
        report_mod.run_bts = original
    return first, second, elapsed, workers, validity


def test_criterion_3_desk_benchmark(verdict, desk_bench):
    first, second, elapsed, workers, validity = desk_bench
    acc = first.accuracies["M25/400"]
    gap = abs(acc["BTS2U"] - acc["PI0"])
    cells = len(DESK["testbeds"]) * len(DESK["sizes"]) * DESK["replications"]
    checks = [
        (f"runtime={elapsed / 60:.1f}min<=60 on {workers} worker(s)", elapsed <= 3600),
        (f"|acc(BTS2U)-acc(PI0)|={gap:.2f}<=0.15 on M25/400", gap <= 0.15),
        (f"probability vectors valid ({sum(validity)}/{len(validity)})", len(validity) == cells and all(validity)),
        ("rerun byte-identical", first.to_csv() == second.to_csv() and first.to_json() == second.to_json()),
    ]
    verdict(3, checks, note=f"accuracies M25/400: {acc}")


# -- 4. property suites ----------------------------------------------------------------------------

PROPERTY_SUITES = {
    "clr round trips": ["test_bayes_space.py::test_round_trips",
                        "test_bayes_space.py::test_round_trip_random_spline_density"],
    "vector-space laws": ["test_bayes_space.py::test_vector_space_laws"],
    "double integral vs clr form": ["test_bayes_space.py::test_inner_product_double_integral_form"],
    "Gram vs quadrature": ["test_splines.py::test_gram_matches_brute_force_quadrature"],
    "fit local optimality": ["test_splines.py::test_fit_is_locally_optimal"],
    "curvature vs quadrature": ["test_splines.py::test_curvature_matches_quadrature"],
    "KDE binned vs naive": ["test_kde.py::test_binned_matches_naive"],
    "mode-count monotone in h": ["test_kde.py::test_mode_count_nonincreasing_in_h"],
    "critical-bandwidth side conditions": ["test_kde.py::test_critical_bandwidth_side_conditions"],
    "SFPCA orthonormality": ["test_pipeline.py::test_principal_components_orthonormal"],
    "score-variance identity": ["test_pipeline.py::test_score_variance_identity"],
    "Jeffreys positivity": ["test_pipeline.py::test_jeffreys_prior_positive_and_normalisable"],
    "probability vectors": ["test_pipeline.py::test_probability_vectors"],
    "singleton => bts1=bts2": ["test_pipeline.py::test_singleton_modality_gets_probability_one"],
    "harmonic-mean identity": ["test_pipeline.py::test_harmonic_mean_identity",
                               "test_pipeline.py::test_harmonic_mean_identity_with_equal_odds"],
    "Savage-Dickey quadrature vs MCMC": ["test_pipeline.py::test_savage_dickey_quadrature_vs_mcmc"],
    "McNemar exact value": ["test_bench.py::test_mcnemar_examples"],
    "Kemeny vs brute force": ["test_bench.py::test_kemeny_matches_brute_force_on_four_methods"],
}


def test_criterion_4_property_suites(verdict, tmp_path):
    nodes = sorted({n for group in PROPERTY_SUITES.values() for n in group})
    junit = tmp_path / "props.xml"
    start = time.perf_counter()
    subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", f"--junitxml={junit}",
                    *nodes], cwd=HERE, capture_output=True, text=True)
    elapsed = time.perf_counter() - start

    import xml.etree.ElementTree as ET

    outcome = {}
    for case in ET.parse(junit).iter("testcase"):
        name = case.get("name").split("[")[0]
        file = case.get("classname").split(".")[-1] + ".py"
        ok = not any(child.tag in ("failure", "error", "skipped") for child in case)
        key = f"{file}::{name}"
        outcome[key] = outcome.get(key, True) and ok
    checks = [(label, all(outcome.get(n, False) for n in group)) for label, group in PROPERTY_SUITES.items()]
    checks.append((f"runtime={elapsed:.0f}s<=120s", elapsed <= 120))
    verdict(4, checks)


# -- 5. excluded ----------------------------------------------------------------------------------

def test_criterion_5_excluded_at_desk_scale(verdict, capsys):
    """The full ranking study is excluded; the Ohtani check runs only when the data is supplied."""
    path = _dataset("ohtani")
    if path is None:
        with capsys.disabled():
            print("\nCRITERION 5: EXCLUDED -- full 14-method/m=200 study not reproducible at desk scale; "
                  "Ohtani CSV not supplied (set BTSMODES_OHTANI_CSV)")
        pytest.skip("excluded from acceptance; Ohtani data not available")
    x = read_sample(path)
    x = x[x >= 70.0]
    rep = run_bts(x, discretised=True, seed=0, dimension=32)
    hyp = {h.k: h for h in rep.hypotheses}
    checks = [("4-modal hypothesis present", 4 in hyp)]
    if 4 in hyp:
        modes = spline_modes(hyp[4].median_spline).modes
        checks.append(("modes within 0.5 mph of 77.4/85.9/89.7/97.6",
                       modes.size == 4 and bool(np.all(np.abs(modes - [77.4, 85.9, 89.7, 97.6]) <= 0.5))))
    for variant in PRIOR_VARIANTS:
        checks.append((f"Pr(4|D,{variant})>=0.85", rep.probabilities[variant].get(4, 0.0) >= 0.85))
        checks.append((f"Pr(4|H1,D,{variant})>=0.85", rep.refined_by_variant[variant].get(4, 0.0) >= 0.85))
    verdict(5, checks, note="optional Ohtani check (criterion otherwise excluded)")
