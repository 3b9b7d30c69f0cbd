import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from survivorlab.stats import (
    cross_window_dependence,
    dispersion_index,
    dispersion_test,
    homogeneity_test,
    ks_exponential_unit,
    merge_cells,
    poisson_cells,
    poisson_gof,
    total_variation_poisson,
)

R = 1000
ALPHA = 0.01
BAND = 3 * math.sqrt(ALPHA * (1 - ALPHA) / R)


def proportional_poisson_sample(mean, size):
    k = np.arange(60)
    reps = np.round(sps.poisson.pmf(k, mean) * size).astype(int)
    return np.repeat(k, reps)


# ---- poisson_gof ----------------------------------------------------------

def test_perfect_fit_passes():
    c = proportional_poisson_sample(3.0, 10_000)
    rep = poisson_gof(c, 3.0)
    assert rep.statistic < 0.05 and rep.passed


def test_constant_counts_fail():
    assert not poisson_gof(np.full(1000, 3), 3.0).passed


def test_poisson_gof_pass_rate(rng):
    passes = sum(poisson_gof(rng.poisson(3.21888, 10_000), 3.21888).passed for _ in range(100))
    # pass count is Binomial(100, 0.99); 95 is far in its lower tail
    assert passes >= 95


def test_poisson_gof_input_checks():
    with pytest.raises(ValueError):
        poisson_gof(np.ones(10), 1.0)
    with pytest.raises(ValueError):
        poisson_gof(np.array([1.5] * 60), 1.0)
    with pytest.raises(ValueError, match="fewer than 2"):
        poisson_gof(np.zeros(50, dtype=int), 0.01)


@given(st.floats(0.05, 40.0), st.integers(50, 100_000))
def test_merged_cells_have_enough_expectation(mean, size):
    groups, probs = poisson_cells(mean, size)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    if len(groups) > 1:
        assert np.all(size * probs >= 5 - 1e-9)
    assert groups[0][0] == 0
    assert all(a[1] == b[0] for a, b in zip(groups, groups[1:]))


@given(st.lists(st.floats(0, 10), min_size=1, max_size=40))
def test_merge_cells_partitions(expected):
    groups = merge_cells(np.array(expected))
    assert groups[0][0] == 0 and groups[-1][1] == len(expected)
    assert all(a[1] == b[0] for a, b in zip(groups, groups[1:]))


# ---- dispersion -----------------------------------------------------------

def test_dispersion_examples(rng):
    assert dispersion_index(np.full(100, 4)).index == 0.0
    assert dispersion_index(np.tile([0, 1], 5000)).index == pytest.approx(0.5, abs=1e-3)
    d = dispersion_index(rng.poisson(5.0, 10_000))
    assert 0.9 <= d.index <= 1.1 and d.contains(1.0)
    with pytest.raises(ValueError):
        dispersion_index(np.zeros(100, dtype=int))


def test_dispersion_range_probability(rng):
    inside = sum(0.9 <= dispersion_index(rng.poisson(5.0, 10_000)).index <= 1.1 for _ in range(300))
    assert inside == 300


# ---- cross-window dependence ----------------------------------------------

def test_cross_window_examples(rng):
    a = rng.poisson(3.0, 1000)
    same = cross_window_dependence(a, a)
    assert same.statistic == pytest.approx(1.0) and not same.passed
    shuffled = cross_window_dependence(a, rng.permutation(a))
    assert abs(shuffled.statistic) < 0.1
    indep = [abs(cross_window_dependence(rng.poisson(3.0, 1000), rng.poisson(2.0, 1000)).statistic)
             for _ in range(200)]
    assert max(indep) < 0.15 and np.mean(np.array(indep) < 0.1) > 0.99 - 0.02
    with pytest.raises(ValueError):
        cross_window_dependence(np.ones(200), a[:200])
    with pytest.raises(ValueError):
        cross_window_dependence(a[:50], a[:50])


# ---- exponential KS -------------------------------------------------------

def test_ks_examples():
    u = (np.arange(10_000) + 0.5) / 10_000
    rep = ks_exponential_unit(-np.log1p(-u))
    assert rep.statistic <= 1e-4 + 1e-12 and rep.passed
    assert not ks_exponential_unit(np.ones(500)).passed
    with pytest.raises(ValueError):
        ks_exponential_unit(np.r_[np.ones(300), 0.0])
    with pytest.raises(ValueError):
        ks_exponential_unit(np.ones(100))


# ---- homogeneity ----------------------------------------------------------

def test_homogeneity_examples(rng):
    a = rng.poisson(3.0, 500)
    same = homogeneity_test(a, a)
    assert same.statistic == pytest.approx(0.0) and same.passed
    fails = sum(not homogeneity_test(rng.poisson(3.0, 500), rng.poisson(6.0, 500)).passed
                for _ in range(100))
    assert fails == 100
    with pytest.raises(ValueError):
        homogeneity_test(np.zeros(200, dtype=int), np.zeros(200, dtype=int))


# ---- calibration ----------------------------------------------------------

NULLS = {
    "poisson_gof": lambda g: poisson_gof(g.poisson(3.21888, 2000), 3.21888),
    "dispersion": lambda g: dispersion_test(g.poisson(5.0, 1000)),
    "cross_window": lambda g: cross_window_dependence(g.poisson(3.0, 1000), g.poisson(2.0, 1000)),
    "ks": lambda g: ks_exponential_unit(g.exponential(size=1000)),
    "homogeneity": lambda g: homogeneity_test(g.poisson(3.0, 500), g.poisson(3.0, 500)),
}


@pytest.mark.parametrize("name", sorted(NULLS))
def test_null_rejection_rate_is_calibrated(name):
    g = np.random.default_rng(2024)
    rate = sum(not NULLS[name](g).passed for _ in range(R)) / R
    assert abs(rate - ALPHA) <= BAND, rate


def test_tests_are_deterministic(rng):
    c = rng.poisson(2.0, 500)
    assert poisson_gof(c, 2.0) == poisson_gof(c.copy(), 2.0)


def test_total_variation():
    assert total_variation_poisson(np.zeros(10, dtype=int), 0.0) == 0.0
    c = proportional_poisson_sample(3.0, 1_000_000)
    assert total_variation_poisson(c, 3.0) < 1e-4
    assert total_variation_poisson(np.full(100, 3), 3.0) == pytest.approx(1 - sps.poisson.pmf(3, 3.0))
