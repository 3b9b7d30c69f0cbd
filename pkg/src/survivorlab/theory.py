"""Closed-form laws of the survivor process and the Poisson-stationarity functional."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .model import (
    AttributeDistribution,
    AttributeFunction,
    DeletionKernel,
    ObservationWindow,
    PoissonArrivals,
    RankedKernel,
    RenewalArrivals,
    ScheduledArrivals,
    ArrivalSpec,
    integrate_dF,
    quad,
)

STATIONARITY_EPSABS = 1e-10


# --------------------------------------------------------------------------
# Test functions f in C_K^+
# --------------------------------------------------------------------------

class TestFunction:
    """Nonnegative function with compact support inside E."""

    __test__ = False  # keep pytest from collecting this

    support: tuple[float, float]

    def __call__(self, x):
        raise NotImplementedError

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.support

    def params(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Step(TestFunction):
    height: float
    window: ObservationWindow

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError("step height must be positive")
        if not self.window.intervals:
            raise ValueError("step needs a nonempty window")

    @property
    def support(self):
        return (self.window.intervals[0][0], self.window.sup)

    @property
    def breakpoints(self):
        return tuple(v for iv in self.window.intervals for v in iv)

    def __call__(self, x):
        if type(x) is float:
            return self.height if any(lo <= x < hi for lo, hi in self.window.intervals) else 0.0
        return np.where(self.window.contains(x), self.height, 0.0)

    def params(self):
        return {"kind": "step", "height": self.height, "window": str(self.window)}


@dataclass(frozen=True)
class Bump(TestFunction):
    """``height * exp(1 - 1/(1 - r**2))`` for ``|r| < 1``, ``r = (x - center)/width``."""

    center: float
    width: float
    height: float = 1.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("bump width and height must be positive")

    @classmethod
    def at_quantile(cls, dist: AttributeDistribution, q: float, width: float,
                    height: float = 1.0) -> Bump:
        return cls(float(dist.quantile(q)), width, height)

    @property
    def support(self):
        return (self.center - self.width, self.center + self.width)

    def __call__(self, x):
        if type(x) is float:
            r = (x - self.center) / self.width
            return self.height * math.exp(1.0 - 1.0 / (1.0 - r * r)) if abs(r) < 1 else 0.0
        r = (np.asarray(x, dtype=float) - self.center) / self.width
        inside = np.abs(r) < 1
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = self.height * np.exp(1.0 - 1.0 / (1.0 - r * r))
        return np.where(inside, val, 0.0)

    def params(self):
        return {"kind": "bump", "center": self.center, "width": self.width,
                "height": self.height}


@dataclass(frozen=True)
class Zero(TestFunction):
    """f == 0, the trivial member of C_K^+."""

    support = (0.0, 0.0)

    def __call__(self, x):
        if type(x) is float:
            return 0.0
        return np.zeros(np.shape(x))

    @property
    def breakpoints(self):
        return ()

    def params(self):
        return {"kind": "zero"}


# --------------------------------------------------------------------------
# Sojourn laws
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SojournProbability:
    value: float
    stderr: float = 0.0
    exact: bool = True


def _rate_factor(dist, a, x) -> float:
    s = float(a(x)) * float(dist.survival(x))
    if not s > 0:
        raise ValueError("a(x) * (1 - F(x)) must be positive")
    return s


def sojourn_survival(arrivals: ArrivalSpec, dist: AttributeDistribution, a: Callable,
                     x: float, w: float, *, rng: np.random.Generator | None = None,
                     mc_samples: int = 20000) -> SojournProbability:
    """P{W(x) > w} for an x-particle entering at an arrival epoch.

    Exact for Poisson arrivals and explicit/deterministic schedules; a Monte
    Carlo estimate of E[(1 - a(x) F̄(x)) ** A(w)] for other renewal laws.
    """
    if w < 0:
        raise ValueError("w must be >= 0")
    s = _rate_factor(dist, a, x)
    if w == 0:
        return SojournProbability(1.0)
    if isinstance(arrivals, PoissonArrivals):
        return SojournProbability(math.exp(-arrivals.rate * s * w))
    if isinstance(arrivals, ScheduledArrivals):
        return SojournProbability((1.0 - s) ** arrivals.count_until(w))
    if isinstance(arrivals, RenewalArrivals):
        ia = arrivals.interarrival
        if ia.family == "deterministic":
            return SojournProbability((1.0 - s) ** math.floor(w / ia.params[0]))
        if ia.family == "exponential":
            return SojournProbability(math.exp(-ia.params[0] * s * w))
        if arrivals.pgf is not None:
            return SojournProbability(float(arrivals.pgf(1.0 - s, w)))
        if rng is None:
            raise ValueError("renewal sojourn law needs an rng for its Monte Carlo estimate")
        vals = (1.0 - s) ** arrivals.counts(rng, w, mc_samples)
        return SojournProbability(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)),
                                  exact=False)
    raise TypeError(f"unsupported arrival spec {arrivals!r}")


def sojourn_survival_window(arrivals: ArrivalSpec, dist: AttributeDistribution, a: Callable,
                            window: ObservationWindow, w: float, *,
                            rng: np.random.Generator | None = None,
                            mc_samples: int = 20000) -> SojournProbability:
    """P{W(B) > w}: the x-law averaged over F restricted to the window."""
    window.check(dist)
    mass = window.mass(dist)
    if mass == 0:
        raise ValueError("window has zero F-mass")
    if w == 0:
        return SojournProbability(1.0)
    if (isinstance(arrivals, RenewalArrivals) and arrivals.pgf is None
            and arrivals.interarrival.family not in ("deterministic", "exponential")):
        if rng is None:
            raise ValueError("renewal sojourn law needs an rng for its Monte Carlo estimate")
        counts = arrivals.counts(rng, w, mc_samples)
        # fixed Gauss-Legendre rule so each sample's integral is deterministic
        nodes, weights = np.polynomial.legendre.leggauss(64)
        per_sample = np.zeros(counts.size)
        for ulo, uhi in window.u_intervals(dist):
            u = 0.5 * (uhi - ulo) * nodes + 0.5 * (uhi + ulo)
            x = dist.quantile(u)
            s = np.asarray(a(x)) * dist.survival(x)
            per_sample += 0.5 * (uhi - ulo) * ((1.0 - s)[None, :] ** counts[:, None]) @ weights
        per_sample /= mass
        return SojournProbability(float(per_sample.mean()),
                                  float(per_sample.std(ddof=1) / math.sqrt(counts.size)),
                                  exact=False)
    value, _ = integrate_dF(lambda x: sojourn_survival(arrivals, dist, a, x, w).value,
                            dist, window, epsabs=1e-11)
    return SojournProbability(value / mass)


def limit_intensity(dist: AttributeDistribution, a: Callable, x: float) -> float:
    """Density of the limiting mean measure with respect to dF: 1/(a(x) F̄(x))."""
    return 1.0 / (float(a(x)) * float(dist.survival(x)))


# --------------------------------------------------------------------------
# Permutation-construction identities
# --------------------------------------------------------------------------

def conditional_survival_r(a_x: float, nu: int) -> float:
    """Survival probability of a particle with nu attributes at or above it.

    ``[1 - (1 - a)**nu] / (nu * a)``, the average of ``(1 - a)**m`` over
    ``m = 0 .. nu - 1``.
    """
    if nu < 1:
        raise ValueError("nu must be a positive integer")
    if not 0 < a_x <= 1:
        raise ValueError("a_x must lie in (0, 1]")
    if a_x == 1.0:
        return 1.0 / nu
    return -math.expm1(nu * math.log1p(-a_x)) / (nu * a_x)


def _binom_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    if p == 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    coeffs = np.array([math.comb(n, int(j)) for j in k], dtype=float)
    return coeffs * p ** k * (1.0 - p) ** (n - k)


def binomial_size_bias_identity(n: int, p: float,
                                f: Callable[[int], float]) -> tuple[float, float]:
    """Both sides of E f(S_n) = E[S_{n+1} f(S_{n+1} - 1) 1(S_{n+1} >= 1)] / (p (n + 1)).

    Exact pmf summation; intended for n <= 25.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    lhs = math.fsum(w * f(k) for k, w in enumerate(_binom_pmf(n, p)))
    pmf1 = _binom_pmf(n + 1, p)
    rhs = math.fsum(pmf1[k] * k * f(k - 1) for k in range(1, n + 2)) / (p * (n + 1))
    return lhs, rhs


# --------------------------------------------------------------------------
# Poisson-stationarity functional
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadValue:
    value: float
    abserr: float


def _u_breaks(dist, f: TestFunction) -> tuple[float, float, list[float]]:
    lo, hi = f.support
    ulo, uhi = float(dist.cdf(lo)), float(dist.cdf(hi))
    return ulo, uhi, [float(dist.cdf(b)) for b in f.breakpoints]


def stationarity_lhs(kernel: DeletionKernel, dist: AttributeDistribution, f: TestFunction,
                     *, epsabs: float = STATIONARITY_EPSABS) -> QuadValue:
    """Left side of the Poisson-stationarity equation by nested quadrature.

    ``int exp{int (1 - e^{-f(x)}) h(x, x1) dF(x)} e^{-f(x1)} dF(x1)`` with
    ``h(x, x1) = p(x, x1) / int p(x, y) dF(y)``; both integrals in u = F(x).
    """
    if isinstance(f, Zero):
        return QuadValue(1.0, 0.0)
    if float(dist.survival(f.support[1])) <= 0:
        raise ValueError("test function support must stay below sup E")
    ulo, uhi, breaks = _u_breaks(dist, f)
    ranked = isinstance(kernel, RankedKernel)

    def inner_integrand(u, x1):
        x = float(dist.quantile(u))
        fx = float(f(x))
        if fx == 0.0:
            return 0.0
        return -math.expm1(-fx) * float(kernel.prob(x, x1)) / float(kernel.denominator(x, dist))

    @lru_cache(maxsize=None)
    def inner(v: float) -> tuple[float, float]:
        x1 = float(dist.quantile(v))
        top = min(v, uhi) if ranked else uhi
        if top <= ulo:
            return 0.0, 0.0
        # kernels built from comparisons jump on the diagonal x = x1
        pts = breaks if ranked else [*breaks, v]
        return quad(lambda u: inner_integrand(u, x1), ulo, top, epsabs=epsabs * 1e-2,
                    epsrel=1e-10, points=pts)

    errs = []

    def outer_integrand(v):
        g, e = inner(v)
        errs.append(e)
        x1 = float(dist.quantile(v))
        return math.exp(g - float(f(x1)))

    total, err = 0.0, 0.0
    # exp(inner) is constant past the support for ranked kernels and
    # everywhere for general ones, so the outer range splits at the support
    for lo, hi in ((0.0, ulo), (ulo, uhi), (uhi, 1.0)):
        if hi <= lo:
            continue
        val, e = quad(outer_integrand, lo, hi, epsabs=epsabs, epsrel=1e-10,
                      points=breaks)
        total += val
        err += e
    return QuadValue(total, err + (max(errs) * math.e if errs else 0.0))


def stationarity_residual(kernel: DeletionKernel, dist: AttributeDistribution,
                          f: TestFunction, *, epsabs: float = STATIONARITY_EPSABS) -> float:
    """|LHS - 1| for the Poisson-stationarity equation; zero iff it holds for f."""
    if isinstance(f, Zero):
        return 0.0
    return abs(stationarity_lhs(kernel, dist, f, epsabs=epsabs).value - 1.0)


def ranked_reduced_lhs(dist: AttributeDistribution, f: TestFunction, *,
                       epsabs: float = STATIONARITY_EPSABS) -> QuadValue:
    """The ranked-kernel form: a(x) cancels and h(x, x1) = 1(x < x1)/F̄(x).

    ``int exp{-int_{x < x1} e^{-f(x)} dF(x)/F̄(x)} e^{-f(x1)} dF(x1)/F̄(x1)``,
    with both integrals evaluated directly by quadrature.
    """
    if isinstance(f, Zero):
        return QuadValue(1.0, 0.0)
    ulo, uhi, breaks = _u_breaks(dist, f)

    def ef(u):
        return math.exp(-float(f(float(dist.quantile(u)))))

    @lru_cache(maxsize=None)
    def inner(v: float) -> float:
        # piecewise so each quad sees a smooth integrand
        edges = [0.0] + [b for b in breaks if 0.0 < b < v] + [v]
        s = 0.0
        for lo, hi in zip(edges, edges[1:]):
            s += quad(lambda u: ef(u) / (1.0 - u), lo, hi, epsabs=epsabs * 1e-2,
                      epsrel=1e-11)[0]
        return s

    def outer(v):
        return math.exp(-inner(v)) * ef(v) / (1.0 - v)

    total, err = 0.0, 0.0
    edges = [0.0] + sorted(b for b in breaks if 0.0 < b < 1.0) + [1.0]
    for lo, hi in zip(edges, edges[1:]):
        val, e = quad(outer, lo, hi, epsabs=epsabs, epsrel=1e-10)
        total += val
        err += e
    return QuadValue(total, err)


def ranked_reduction_check(dist: AttributeDistribution, a: Callable, f: TestFunction, *,
                           epsabs: float = STATIONARITY_EPSABS) -> tuple[float, float]:
    """Residuals of the general functional and of its ranked reduction."""
    if isinstance(f, Zero):
        return 0.0, 0.0
    if not isinstance(a, AttributeFunction):
        raise TypeError("a must be an AttributeFunction")
    kernel = RankedKernel(a.bind(dist))
    r44 = abs(stationarity_lhs(kernel, dist, f, epsabs=epsabs).value - 1.0)
    r48 = abs(ranked_reduced_lhs(dist, f, epsabs=epsabs).value - 1.0)
    return r44, r48


@dataclass(frozen=True)
class SweepRow:
    kernel: str
    function: dict
    lhs: float
    residual: float
    abserr: float


def stationarity_sweep(kernel: DeletionKernel, dist: AttributeDistribution,
                       functions: Iterable[TestFunction], *,
                       epsabs: float = STATIONARITY_EPSABS) -> list[SweepRow]:
    rows = []
    for f in functions:
        q = stationarity_lhs(kernel, dist, f, epsabs=epsabs)
        rows.append(SweepRow(kernel.name, f.params(), q.value, abs(q.value - 1.0), q.abserr))
    return rows


def default_test_functions(dist: AttributeDistribution) -> list[TestFunction]:
    """Ten steps and bumps placed by quantile so they fit any distribution."""
    q = lambda u: float(dist.quantile(u))  # noqa: E731
    fns: list[TestFunction] = [
        Step(1.0, ObservationWindow.of(q(0.2), q(0.6))),
        Step(0.5, ObservationWindow.of(q(0.05), q(0.3))),
        Step(2.0, ObservationWindow.of(q(0.5), q(0.9))),
        Step(3.0, ObservationWindow.of((q(0.1), q(0.2)), (q(0.4), q(0.7)))),
        Step(0.1, ObservationWindow.of(q(0.0001), q(0.95))),
    ]
    for center_u, rel_width, height in ((0.5, 0.2, 1.0), (0.3, 0.1, 2.0), (0.7, 0.15, 0.5),
                                        (0.85, 0.05, 4.0), (0.2, 0.15, 1.5)):
        lo, hi = q(center_u - rel_width), q(center_u + rel_width)
        fns.append(Bump(0.5 * (lo + hi), 0.5 * (hi - lo), height))
    return fns
