import time

import numpy as np
import pytest

from blendlab.concepts import DenoiserRegistry
from blendlab.schedule import make_linear_schedule
from blendlab.verify import (
    OracleReport,
    default_suite,
    finite_diff_score_check,
    marginal_moment_check,
    reduction_check,
)


def test_report_pass_flag():
    assert OracleReport("x", 1e-6, 1e-6, 1).passed
    assert not OracleReport("x", 2e-6, 1e-6, 1).passed
    assert "FAIL" in OracleReport("x", 2e-6, 1e-6, 1).row()


def test_fd_check_standard_normal_is_exact(make_gaussian):
    reg = DenoiserRegistry([make_gaussian("n", [0.0, 0.0])])
    rep = finite_diff_score_check(reg, 20, np.random.default_rng(0))
    assert rep.passed and rep.max_error < 1e-8


def test_fd_check_random_mixtures():
    rep = finite_diff_score_check(None, 100, np.random.default_rng(1))
    assert rep.passed and rep.sample_size == 100


def test_fd_check_catches_perturbed_score():
    broken = lambda mix, z: mix.score(z) + 1e-3  # noqa: E731
    rep = finite_diff_score_check(None, 20, np.random.default_rng(2), score_fn=broken)
    assert not rep.passed


def test_marginal_moments(make_gaussian):
    rng = np.random.default_rng(3)
    g = make_gaussian("g", [4.0, 0.0])
    assert marginal_moment_check(g, 1, 50_000, rng, make_linear_schedule(1, 0.75, 0.75)).passed
    assert marginal_moment_check(g, 0, 50_000, rng).passed
    noisy = make_linear_schedule(100, 0.05, 0.3)
    assert noisy.alpha_bars[100] < 1e-6
    assert marginal_moment_check(g, 100, 50_000, rng, noisy).passed
    with pytest.raises(ValueError):
        marginal_moment_check(g, 0, 999, rng)


def test_moment_error_detects_shifted_mean():
    from blendlab.verify import _mc_moment_error

    x = np.random.default_rng(5).normal(size=(50_000, 2)) + [4.0, 0.0]
    assert _mc_moment_error(x, np.array([4.0, 0.0]), np.eye(2))[0] <= 1.0
    assert _mc_moment_error(x, np.array([4.1, 0.0]), np.eye(2))[0] > 1.0
    assert _mc_moment_error(x, np.array([4.0, 0.0]), 1.2 * np.eye(2))[0] > 1.0


def test_reduction_checks_pass(two_concepts, small_config):
    reps = reduction_check(small_config, two_concepts)
    assert len(reps) == 4
    assert all(r.passed for r in reps), [r.row() for r in reps]


def test_default_suite_passes_quickly():
    start = time.perf_counter()
    reps = default_suite()
    assert time.perf_counter() - start < 60
    assert all(r.passed for r in reps), [r.row() for r in reps if not r.passed]
