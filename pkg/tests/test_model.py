import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from survivorlab.model import (
    ArrivalExplosion,
    AttributeDistribution,
    AttributeFunction,
    DivergenceError,
    GeneralKernel,
    Interarrival,
    ObservationWindow,
    PoissonArrivals,
    RenewalArrivals,
    ScheduledArrivals,
    lifetime_survival,
    mean_measure,
    ranked_kernel,
    sample_attribute,
    unranked_kernel,
)

UNI = AttributeDistribution.uniform()
EXPO = AttributeDistribution.exponential(2.0)
BETA = AttributeDistribution.beta(2.0, 3.0)

dists = st.sampled_from([UNI, EXPO, BETA, AttributeDistribution.uniform(-1.0, 3.0)])


@given(dists, st.floats(1e-6, 1 - 1e-6))
def test_quantile_inverts_cdf(dist, u):
    x = dist.quantile(u)
    assert dist.cdf(x) == pytest.approx(u, abs=1e-10)
    assert dist.survival(x) == pytest.approx(1 - u, abs=1e-10)


@given(dists, st.floats(-5, 5))
def test_scalar_path_matches_vector_path(dist, x):
    assert dist.cdf(x) == pytest.approx(float(dist.cdf(np.array([x]))[0]), abs=1e-14)
    assert dist.survival(x) == pytest.approx(float(dist.survival(np.array([x]))[0]), abs=1e-14)


@pytest.mark.parametrize("dist,ref", [
    (UNI, sps.uniform()), (EXPO, sps.expon(scale=0.5)), (BETA, sps.beta(2, 3))])
def test_cdf_against_scipy(dist, ref):
    x = np.linspace(-0.5, 3, 37)
    np.testing.assert_allclose(dist.cdf(x), ref.cdf(x), atol=1e-13)


def test_samples_lie_in_support(rng):
    for dist in (UNI, EXPO, BETA):
        s = dist.sample(rng, 10_000)
        assert np.all(dist.in_support(s))
        assert dist.in_support(np.array([sample_attribute(dist, rng)]))[0]


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        AttributeDistribution("cauchy", ())


def test_attribute_function_families():
    assert AttributeFunction.constant(0.3)(0.9) == 0.3
    aff = AttributeFunction.affine(0.2, 0.5)
    assert aff(0.4) == pytest.approx(0.4)
    tab = AttributeFunction.tabulated([0, 1], [0.2, 0.6])
    np.testing.assert_allclose(tab(np.array([0.0, 0.5, 1.0])), [0.2, 0.4, 0.6])
    cdf_aff = AttributeFunction.affine(0.9, -0.6, on="cdf").bind(EXPO)
    x = float(EXPO.quantile(0.5))
    assert cdf_aff(x) == pytest.approx(0.6)


def test_unbound_cdf_affine_raises():
    with pytest.raises(ValueError, match="bound"):
        AttributeFunction.affine(0.9, -0.6, on="cdf")(0.5)


@pytest.mark.parametrize("a", [0.0, -0.1, 1.5])
def test_constant_outside_unit_interval_rejected(a):
    with pytest.raises(ValueError):
        AttributeFunction.constant(a)


def test_validate_catches_affine_leaving_unit_interval():
    with pytest.raises(ValueError):
        AttributeFunction.affine(0.5, 1.0).validate(UNI)
    AttributeFunction.affine(0.2, 0.6).validate(UNI)


def test_ranked_prob_is_strict():
    k = ranked_kernel(0.4)
    np.testing.assert_allclose(k.prob(np.array([0.1, 0.5, 0.7]), 0.5), [0.4, 0.0, 0.0])
    assert k.prob(0.2, 0.5) == 0.4
    assert k.prob(0.5, 0.5) == 0.0


def test_windows_merge_and_reject_overlap():
    w = ObservationWindow.of((0.0, 0.2), (0.2, 0.4))
    assert w.intervals == ((0.0, 0.4),)
    with pytest.raises(ValueError):
        ObservationWindow.of((0.0, 0.3), (0.2, 0.4))
    with pytest.raises(ValueError):
        ObservationWindow.of(0.5, 0.5)


@given(st.lists(st.floats(0, 1, exclude_max=True), max_size=40), st.floats(0.05, 0.95))
def test_window_counts_are_additive(xs, cut):
    x = np.array(xs)
    left, right = ObservationWindow.of(0.0, cut), ObservationWindow.of(cut, 1.0)
    assert left.count(x) + right.count(x) == left.union(right).count(x) == x.size


def test_window_is_half_open():
    w = ObservationWindow.of(0.2, 0.4)
    assert list(w.contains(np.array([0.2, 0.4]))) == [True, False]


# closed forms of int_B dF / (a F_bar) for a uniform F and constant a
@pytest.mark.parametrize("lo,hi,expected", [
    (0.0, 0.25, 5 * math.log(4 / 3)),
    (0.25, 0.5, 5 * math.log(3 / 2)),
    (0.5, 0.75, 5 * math.log(2)),
])
def test_mean_measure_uniform_closed_form(lo, hi, expected):
    assert mean_measure(UNI, ranked_kernel(0.2), ObservationWindow.of(lo, hi)) == pytest.approx(
        expected, rel=1e-10)


def test_mean_measure_exponential_is_linear():
    # F_bar = e^{-2x} cancels dF = 2 e^{-2x} dx, leaving 2 b / a
    assert mean_measure(EXPO, ranked_kernel(0.5), ObservationWindow.of(0.0, 3.0)) == pytest.approx(
        12.0, rel=1e-10)


def test_mean_measure_general_kernel_by_quadrature():
    a = 0.5
    k = GeneralKernel(lambda x, y: np.where(x < y, a, 0.0))
    w = ObservationWindow.of(0.0, 0.8)
    assert mean_measure(UNI, k, w) == pytest.approx(2 * math.log(5), rel=1e-7)


def test_mean_measure_unranked_is_mass_over_a():
    assert mean_measure(UNI, unranked_kernel(0.5), ObservationWindow.of(0.0, 0.8)) == pytest.approx(1.6)


def test_mean_measure_edge_cases():
    assert mean_measure(UNI, ranked_kernel(0.3), ObservationWindow.empty()) == 0.0
    with pytest.raises(DivergenceError):
        mean_measure(UNI, ranked_kernel(0.3), ObservationWindow.of(0.5, 1.0))


@given(st.floats(0.01, 1.0), st.integers(0, 50))
def test_lifetime_survival_is_geometric_tail(a, ell):
    assert lifetime_survival(a, ell) == pytest.approx((1 - a) ** ell, rel=1e-12, abs=1e-300)


def test_poisson_arrivals(rng):
    assert PoissonArrivals(0.0).epochs(rng, 100.0).size == 0
    t = PoissonArrivals(2.0).epochs(rng, 500.0)
    assert np.all(np.diff(t) >= 0) and t.max() <= 500.0
    assert abs(t.size - 1000) < 5 * math.sqrt(1000)
    with pytest.raises(ArrivalExplosion):
        PoissonArrivals(10.0).epochs(rng, 1000.0, max_arrivals=100)


def test_renewal_and_schedule(rng):
    det = RenewalArrivals(Interarrival("deterministic", (0.5,)))
    np.testing.assert_allclose(det.epochs(rng, 2.0), [0.5, 1.0, 1.5, 2.0])
    gam = RenewalArrivals(Interarrival("gamma", (2.0, 0.5)))
    assert gam.epochs(rng, 1000.0).size == pytest.approx(1000, rel=0.1)
    sch = ScheduledArrivals((1.0, 2.0, 3.0))
    assert sch.count_until(2.0) == 2
    np.testing.assert_allclose(sch.epochs(rng, 2.5), [1.0, 2.0])
    with pytest.raises(ValueError):
        ScheduledArrivals((2.0, 1.0))
