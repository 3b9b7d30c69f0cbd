import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survivorlab.model import (
    AttributeDistribution,
    AttributeFunction,
    GeneralKernel,
    Interarrival,
    ObservationWindow,
    PoissonArrivals,
    RenewalArrivals,
    ScheduledArrivals,
    integrate_dF,
    lifetime_survival,
    mean_measure,
    ranked_kernel,
    unranked_kernel,
)
from survivorlab.theory import (
    Bump,
    Step,
    Zero,
    binomial_size_bias_identity,
    conditional_survival_r,
    default_test_functions,
    limit_intensity,
    ranked_reduction_check,
    sojourn_survival,
    sojourn_survival_window,
    stationarity_residual,
    stationarity_sweep,
)

UNI = AttributeDistribution.uniform()
EXPO = AttributeDistribution.exponential(1.0)
HALF = AttributeFunction.constant(0.5)


# ---- test functions -------------------------------------------------------

def test_step_and_bump_shapes():
    s = Step(2.0, ObservationWindow.of(0.2, 0.6))
    assert s(0.3) == 2.0 and s(0.6) == 0.0 and s(0.1) == 0.0
    b = Bump(0.5, 0.1, 3.0)
    assert b(0.5) == pytest.approx(3.0)
    assert b(0.6) == 0.0 and b(0.35) == 0.0
    x = np.linspace(0, 1, 101)
    assert np.all(b(x) >= 0)
    np.testing.assert_allclose(b(x), [b(float(v)) for v in x])


def test_default_sweep_has_ten_functions_inside_e():
    for dist in (UNI, EXPO):
        fns = default_test_functions(dist)
        assert len(fns) == 10
        for f in fns:
            assert dist.survival(f.support[1]) > 0


# ---- sojourn laws ---------------------------------------------------------

def test_sojourn_survival_examples():
    poi = PoissonArrivals(2.0)
    assert sojourn_survival(poi, UNI, HALF, 0.25, 0.0).value == 1.0
    assert sojourn_survival(poi, UNI, HALF, 0.25, 1.0).value == pytest.approx(math.exp(-0.75))
    det = RenewalArrivals(Interarrival("deterministic", (1.0,)))
    # a F_bar = 0.1 at x = 0.8 for a = 0.5
    assert sojourn_survival(det, UNI, HALF, 0.8, 2.5).value == pytest.approx(0.81)
    sched = ScheduledArrivals((0.5, 1.5, 4.0))
    assert sojourn_survival(sched, UNI, HALF, 0.8, 2.0).value == pytest.approx(0.81)


def test_general_renewal_is_flagged_as_estimate(rng):
    gam = RenewalArrivals(Interarrival("gamma", (2.0, 0.5)))
    p = sojourn_survival(gam, UNI, HALF, 0.5, 3.0, rng=rng, mc_samples=4000)
    assert not p.exact and p.stderr > 0
    # gamma(2, 0.5) has unit mean, so about three arrivals by w = 3
    assert 0.75 ** 4 < p.value < 0.75 ** 2
    with pytest.raises(ValueError):
        sojourn_survival(gam, UNI, HALF, 0.5, 3.0)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.01, 0.95))
def test_poisson_sojourn_is_memoryless(w1, w2, x):
    poi = PoissonArrivals(1.3)
    joint = sojourn_survival(poi, UNI, HALF, x, w1 + w2).value
    split = sojourn_survival(poi, UNI, HALF, x, w1).value * sojourn_survival(poi, UNI, HALF, x, w2).value
    assert joint == pytest.approx(split, rel=1e-12, abs=1e-300)


def test_sojourn_window_examples():
    poi = PoissonArrivals(1.0)
    # E is open at 1, so a window reaching 1 diverges; approach it instead
    w = ObservationWindow.of(0.0, 1.0 - 1e-12)
    assert sojourn_survival_window(poi, UNI, HALF, w, 0.0).value == 1.0
    assert sojourn_survival_window(poi, UNI, HALF, w, 1.0).value == pytest.approx(
        2 * (1 - math.exp(-0.5)), abs=1e-9)
    narrow = ObservationWindow.of(0.4, 0.4 + 1e-6)
    assert sojourn_survival_window(poi, UNI, HALF, narrow, 2.0).value == pytest.approx(
        sojourn_survival(poi, UNI, HALF, 0.4, 2.0).value, abs=1e-4)


# ---- limit intensity and conditional survival ----------------------------

def test_limit_intensity_examples():
    assert limit_intensity(UNI, HALF, 0.5) == pytest.approx(4.0)
    assert limit_intensity(UNI, AttributeFunction.constant(0.2), 0.75) == pytest.approx(20.0)
    assert limit_intensity(UNI, AttributeFunction.constant(1.0), 1e-9) == pytest.approx(1.0)


@pytest.mark.parametrize("dist,a", [(UNI, HALF), (EXPO, AttributeFunction.affine(0.3, 0.4, on="cdf"))])
def test_limit_intensity_integrates_to_mean_measure(dist, a):
    a = a.bind(dist)
    w = ObservationWindow.of(float(dist.quantile(0.1)), float(dist.quantile(0.7)))
    direct, _ = integrate_dF(lambda x: limit_intensity(dist, a, x), dist, w, epsabs=1e-12)
    assert direct == pytest.approx(mean_measure(dist, ranked_kernel(a), w), abs=1e-8)


def test_conditional_survival_examples():
    assert conditional_survival_r(0.37, 1) == 1.0
    assert conditional_survival_r(0.5, 3) == pytest.approx(1.75 / 3)
    assert conditional_survival_r(1.0, 4) == 0.25


@given(st.floats(0.001, 0.999), st.integers(1, 200))
def test_conditional_survival_is_average_of_lifetime_tails(a, nu):
    r = conditional_survival_r(a, nu)
    brute = math.fsum(lifetime_survival(a, m) for m in range(nu)) / nu
    assert r == pytest.approx(brute, abs=1e-12)
    if nu > 1:
        assert 1 / nu < r < 1
        assert conditional_survival_r(a, nu + 1) < r


# ---- size-bias identity ---------------------------------------------------

def _exact_sides(n, p, f):
    p = Fraction(p)
    pmf = lambda m, k: Fraction(math.comb(m, k)) * p**k * (1 - p) ** (m - k)  # noqa: E731
    lhs = sum(pmf(n, k) * f(k) for k in range(n + 1))
    rhs = sum(pmf(n + 1, k) * k * f(k - 1) for k in range(1, n + 2)) / (p * (n + 1))
    return lhs, rhs


@given(st.integers(1, 25), st.sampled_from([0.1, 0.25, 0.5, 0.9, 1.0]),
       st.sampled_from(["const", "id", "sq", "ind"]))
def test_size_bias_identity_matches_rational_oracle(n, p, name):
    f = {"const": lambda k: 1, "id": lambda k: k, "sq": lambda k: k * k,
         "ind": lambda k: int(k >= 1)}[name]
    lhs, rhs = binomial_size_bias_identity(n, p, lambda k: float(f(k)))
    exact, exact_rhs = _exact_sides(n, p, f)
    assert exact == exact_rhs
    assert lhs == pytest.approx(float(exact), rel=1e-12, abs=1e-12)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_size_bias_examples():
    assert binomial_size_bias_identity(7, 0.3, lambda k: 1.0) == pytest.approx((1.0, 1.0))
    assert binomial_size_bias_identity(2, 0.5, float) == pytest.approx((1.0, 1.0))
    lhs, rhs = binomial_size_bias_identity(6, 1.0, lambda k: k**3)
    assert lhs == pytest.approx(216) and rhs == pytest.approx(216)


# ---- stationarity functional ---------------------------------------------

STEP = Step(1.0, ObservationWindow.of(0.2, 0.6))


@pytest.mark.parametrize("kernel,dist", [
    (ranked_kernel(0.5), UNI),
    (ranked_kernel(AttributeFunction.affine(0.2, 0.6)), UNI),
    (ranked_kernel(AttributeFunction.constant(0.3)), EXPO),
])
def test_ranked_kernels_are_stationary(kernel, dist):
    assert stationarity_residual(kernel.bind(dist), dist, STEP) < 1e-6


def test_zero_function_has_zero_residual():
    assert stationarity_residual(unranked_kernel(0.5), UNI, Zero()) == 0.0
    assert ranked_reduction_check(UNI, HALF, Zero()) == (0.0, 0.0)


def test_unranked_step_matches_scalar_oracle():
    q = 0.5 * math.exp(-1) + 0.5
    oracle = 1 - q * math.exp(1 - q)
    res = stationarity_residual(unranked_kernel(0.5), UNI, Step(1.0, ObservationWindow.of(0, 0.5)))
    assert res == pytest.approx(oracle, abs=1e-8)
    assert res == pytest.approx(0.0619, abs=1e-3)


@settings(max_examples=8)
@given(st.floats(0.05, 0.5), st.floats(0.05, 0.4), st.floats(0.2, 3.0))
def test_unranked_kernel_never_stationary_for_steps(lo, length, height):
    f = Step(height, ObservationWindow.of(lo, lo + length))
    assert stationarity_residual(unranked_kernel(0.5), UNI, f) > 1e-9


def test_general_kernel_equals_ranked():
    k = GeneralKernel(lambda x, y: np.where(x < y, 0.5, 0.0),
                      denominator_fn=lambda x: 0.5 * (1 - np.asarray(x)))
    assert stationarity_residual(k, UNI, STEP) < 1e-6


@pytest.mark.parametrize("dist,a,f", [
    (UNI, HALF, STEP),
    (EXPO, AttributeFunction.affine(0.3, 0.4, on="cdf"), Bump.at_quantile(EXPO, 0.5, 0.3, 1.0)),
])
def test_ranked_reduction_agrees(dist, a, f):
    r44, r48 = ranked_reduction_check(dist, a, f)
    assert r44 < 1e-6 and r48 < 1e-6
    assert abs(r44 - r48) < 1e-8


def test_reduction_needs_attribute_function():
    with pytest.raises(TypeError):
        ranked_reduction_check(UNI, lambda x: 0.5, STEP)


def test_sweep_rows():
    rows = stationarity_sweep(ranked_kernel(0.5), UNI, default_test_functions(UNI)[:3])
    assert len(rows) == 3
    assert all(r.residual < 1e-6 and r.kernel == "ranked" for r in rows)
    assert rows[0].function["kind"] == "step"
