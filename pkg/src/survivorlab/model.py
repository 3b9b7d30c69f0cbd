"""Attribute distributions, deletion kernels, arrival processes and windows.

Everything here is immutable after construction. Integrals against ``dF`` are
computed in quantile coordinates ``u = F(x)`` so that every integral is a
proper integral over a subinterval of (0, 1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

QUAD_EPSABS = 1e-9
DIVERGENCE_LIMIT = 1e12

_TINY = np.nextafter(0.0, 1.0)


class DivergenceError(ValueError):
    """An intensity integral is unbounded on the requested window."""


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved abs. error {achieved:.3g})")
        self.achieved = achieved


def quad(fn, lo: float, hi: float, *, epsabs: float = QUAD_EPSABS, epsrel: float = 1e-10,
         points: Sequence[float] = (), limit: int = 400) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod quadrature on [lo, hi]; raises on non-convergence."""
    if hi <= lo:
        return 0.0, 0.0
    pts = sorted({p for p in points if lo < p < hi})
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(fn, lo, hi, epsabs=epsabs, epsrel=epsrel,
                                        points=pts or None, limit=limit)
        except integrate.IntegrationWarning:
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, err = integrate.quad(fn, lo, hi, epsabs=epsabs, epsrel=epsrel,
                                        points=pts or None, limit=limit)
            if not err <= max(10 * epsabs, 10 * epsrel * abs(value)):
                raise QuadratureError("quadrature did not converge", err) from None
    return value, err


# --------------------------------------------------------------------------
# Attribute distribution F
# --------------------------------------------------------------------------

_DIST_PARAMS = {
    "uniform": ("low", "high"),
    "exponential": ("rate",),
    "beta": ("alpha", "beta"),
}


@dataclass(frozen=True)
class AttributeDistribution:
    """A continuous attribute law from a small closed set of families.

    The attribute space is ``E = {x : 0 < F(x) < 1}``, given by
    :attr:`support_bounds` as an open interval.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in _DIST_PARAMS:
            raise ValueError(f"unknown distribution family {self.family!r}")
        names = _DIST_PARAMS[self.family]
        if len(self.params) != len(names):
            raise ValueError(f"{self.family} takes parameters {names}")
        p = self.params
        if not all(math.isfinite(v) for v in p):
            raise ValueError("distribution parameters must be finite")
        if self.family == "uniform" and not p[0] < p[1]:
            # low == high would be a point mass
            raise ValueError("uniform requires low < high (atoms are not allowed)")
        if self.family == "exponential" and not p[0] > 0:
            raise ValueError("exponential requires rate > 0")
        if self.family == "beta" and not (p[0] > 0 and p[1] > 0):
            raise ValueError("beta requires alpha, beta > 0")

    @classmethod
    def uniform(cls, low: float = 0.0, high: float = 1.0) -> AttributeDistribution:
        return cls("uniform", (float(low), float(high)))

    @classmethod
    def exponential(cls, rate: float = 1.0) -> AttributeDistribution:
        return cls("exponential", (float(rate),))

    @classmethod
    def beta(cls, alpha: float, beta: float) -> AttributeDistribution:
        return cls("beta", (float(alpha), float(beta)))

    @property
    def support_bounds(self) -> tuple[float, float]:
        if self.family == "uniform":
            return self.params
        if self.family == "exponential":
            return (0.0, math.inf)
        return (0.0, 1.0)

    # Each method takes a fast scalar path for Python floats: the quadrature
    # integrands call them one point at a time.

    def cdf(self, x):
        if type(x) is float:
            return self._cdf1(x)
        x = np.asarray(x, dtype=float)
        if self.family == "uniform":
            lo, hi = self.params
            out = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        elif self.family == "exponential":
            out = np.where(x > 0, -np.expm1(-self.params[0] * np.maximum(x, 0.0)), 0.0)
        else:
            out = special.betainc(self.params[0], self.params[1], np.clip(x, 0.0, 1.0))
        return out[()] if out.ndim == 0 else out

    def survival(self, x):
        if type(x) is float:
            return self._sf1(x)
        x = np.asarray(x, dtype=float)
        if self.family == "uniform":
            lo, hi = self.params
            out = np.clip((hi - x) / (hi - lo), 0.0, 1.0)
        elif self.family == "exponential":
            out = np.where(x > 0, np.exp(-self.params[0] * np.maximum(x, 0.0)), 1.0)
        else:
            out = special.betainc(self.params[1], self.params[0], np.clip(1.0 - x, 0.0, 1.0))
        return out[()] if out.ndim == 0 else out

    def quantile(self, u):
        if type(u) is float:
            return self._ppf1(u)
        u = np.asarray(u, dtype=float)
        if self.family == "uniform":
            lo, hi = self.params
            out = lo + u * (hi - lo)
        elif self.family == "exponential":
            out = -np.log1p(-u) / self.params[0]
        else:
            out = special.betaincinv(self.params[0], self.params[1], u)
        return out[()] if out.ndim == 0 else out

    def _cdf1(self, x: float) -> float:
        p = self.params
        if self.family == "uniform":
            return min(1.0, max(0.0, (x - p[0]) / (p[1] - p[0])))
        if self.family == "exponential":
            return -math.expm1(-p[0] * x) if x > 0 else 0.0
        return float(special.betainc(p[0], p[1], min(1.0, max(0.0, x))))

    def _sf1(self, x: float) -> float:
        p = self.params
        if self.family == "uniform":
            return min(1.0, max(0.0, (p[1] - x) / (p[1] - p[0])))
        if self.family == "exponential":
            return math.exp(-p[0] * x) if x > 0 else 1.0
        return float(special.betainc(p[1], p[0], min(1.0, max(0.0, 1.0 - x))))

    def _ppf1(self, u: float) -> float:
        p = self.params
        if self.family == "uniform":
            return p[0] + u * (p[1] - p[0])
        if self.family == "exponential":
            return -math.log1p(-u) / p[0] if u < 1 else math.inf
        return float(special.betaincinv(p[0], p[1], u))

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        # rng.random() can return exactly 0, whose quantile is inf E
        u = np.where(u == 0.0, _TINY, u)
        return self.quantile(u)

    def sampler(self, rng: np.random.Generator) -> float:
        return float(self.sample(rng))

    def in_support(self, x) -> np.ndarray:
        f = self.cdf(x)
        return (f > 0) & (f < 1)


def sample_attribute(dist: AttributeDistribution, rng: np.random.Generator) -> float:
    return dist.sampler(rng)


# --------------------------------------------------------------------------
# Deletion probability a(x) and kernels p(x, y)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributeFunction:
    """Deletion probability a(x) as data: constant, affine or tabulated.

    ``affine`` is ``intercept + slope * t`` where ``t`` is either the
    attribute itself (``on="x"``) or its cdf value (``on="cdf"``, which needs
    the distribution at evaluation time and is bound via :meth:`bind`).
    """

    family: str
    params: tuple = ()
    on: str = "x"
    dist: AttributeDistribution | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in ("constant", "affine", "tabulated"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "constant":
            (a,) = self.params
            if not 0 < a <= 1:
                raise ValueError("constant a must lie in (0, 1]")
        elif self.family == "tabulated":
            grid, values = self.params
            if len(grid) != len(values) or len(grid) < 2:
                raise ValueError("tabulated a needs matching grid/values of length >= 2")
            if any(g2 <= g1 for g1, g2 in zip(grid, grid[1:])):
                raise ValueError("tabulated grid must be strictly increasing")
            if not all(0 < v <= 1 for v in values):
                raise ValueError("tabulated values must lie in (0, 1]")
        if self.on not in ("x", "cdf"):
            raise ValueError("affine 'on' must be 'x' or 'cdf'")

    @classmethod
    def constant(cls, a: float) -> AttributeFunction:
        return cls("constant", (float(a),))

    @classmethod
    def affine(cls, intercept: float, slope: float, on: str = "x",
               dist: AttributeDistribution | None = None) -> AttributeFunction:
        return cls("affine", (float(intercept), float(slope)), on=on, dist=dist)

    @classmethod
    def tabulated(cls, grid: Sequence[float], values: Sequence[float]) -> AttributeFunction:
        return cls("tabulated", (tuple(map(float, grid)), tuple(map(float, values))))

    def bind(self, dist: AttributeDistribution) -> AttributeFunction:
        if self.family == "affine" and self.on == "cdf":
            return AttributeFunction(self.family, self.params, self.on, dist)
        return self

    def __call__(self, x):
        if type(x) is float:
            return self._eval1(x)
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            out = np.full(x.shape, self.params[0])
        elif self.family == "affine":
            if self.on == "cdf":
                if self.dist is None:
                    raise ValueError("affine-in-cdf a(x) must be bound to a distribution")
                t = self.dist.cdf(x)
            else:
                t = x
            out = self.params[0] + self.params[1] * t
        else:
            out = np.interp(x, self.params[0], self.params[1])
        return out[()] if out.ndim == 0 else out

    def _eval1(self, x: float) -> float:
        if self.family == "constant":
            return self.params[0]
        if self.family == "affine":
            if self.on == "cdf":
                if self.dist is None:
                    raise ValueError("affine-in-cdf a(x) must be bound to a distribution")
                x = self.dist.cdf(x)
            return self.params[0] + self.params[1] * x
        return float(np.interp(x, self.params[0], self.params[1]))

    def validate(self, dist: AttributeDistribution, grid_size: int = 2001) -> None:
        """Check a(x) in (0, 1] on a quantile grid covering E."""
        u = (np.arange(grid_size) + 0.5) / grid_size
        vals = np.asarray(self.bind(dist)(dist.quantile(u)))
        if np.any(vals <= 0) or np.any(vals > 1) or not np.all(np.isfinite(vals)):
            raise ValueError("a(x) must lie in (0, 1] on the attribute space")


class DeletionKernel:
    """Probability p(x, y) that an x-particle is deleted by an arriving y-particle."""

    ranked: bool = False
    name: str = "kernel"

    def prob(self, x, y):
        raise NotImplementedError

    def denominator(self, x, dist: AttributeDistribution):
        """d(x) = integral of p(x, y) dF(y)."""
        x = np.asarray(x, dtype=float)
        out = np.array([self._denominator_quad(float(xi), dist) for xi in x.ravel()])
        out = out.reshape(x.shape)
        return out[()] if out.ndim == 0 else out

    def _denominator_quad(self, x: float, dist: AttributeDistribution) -> float:
        value, _ = quad(lambda v: float(self.prob(x, dist.quantile(v))), 0.0, 1.0,
                        points=(float(dist.cdf(x)),), epsabs=1e-12)
        return value

    def bind(self, dist: AttributeDistribution) -> DeletionKernel:
        """Resolve any distribution-dependent a(x)."""
        return self

    def validate(self, dist: AttributeDistribution, grid_size: int = 201) -> None:
        u = (np.arange(grid_size) + 0.5) / grid_size
        d = np.asarray(self.denominator(dist.quantile(u), dist))
        if np.any(d <= 0):
            raise ValueError("kernel denominator must be positive F-a.e.")


@dataclass(frozen=True)
class RankedKernel(DeletionKernel):
    """p(x, y) = 1(x < y) a(x)."""

    a: AttributeFunction
    name: str = "ranked"
    ranked = True

    def prob(self, x, y):
        if type(x) is float and type(y) is float:
            return self.a(x) if x < y else 0.0
        x = np.asarray(x, dtype=float)
        return np.where(x < np.asarray(y, dtype=float), self.a(x), 0.0)

    def denominator(self, x, dist):
        return self.a(x) * dist.survival(x)

    def bind(self, dist):
        return RankedKernel(self.a.bind(dist), self.name)

    def validate(self, dist, grid_size: int = 2001) -> None:
        self.a.validate(dist, grid_size)


@dataclass(frozen=True)
class UnrankedKernel(DeletionKernel):
    """p(x, y) = a(x): every live particle is exposed to every arrival."""

    a: AttributeFunction
    name: str = "unranked"

    def prob(self, x, y):
        if type(x) is float and type(y) is float:
            return self.a(x)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        return np.broadcast_to(self.a(x), shape).astype(float)

    def denominator(self, x, dist):
        return self.a(x)

    def bind(self, dist):
        return UnrankedKernel(self.a.bind(dist), self.name)

    def validate(self, dist, grid_size: int = 2001) -> None:
        self.a.validate(dist, grid_size)


@dataclass(frozen=True)
class GeneralKernel(DeletionKernel):
    """An arbitrary kernel given as a vectorised callable ``p(x, y)``.

    ``denominator_fn`` may supply d(x) in closed form; otherwise d(x) is
    computed by quadrature.
    """

    p: Callable
    name: str = "general"
    denominator_fn: Callable | None = None

    def prob(self, x, y):
        return np.asarray(self.p(np.asarray(x, dtype=float), np.asarray(y, dtype=float)),
                          dtype=float)

    def denominator(self, x, dist):
        if self.denominator_fn is not None:
            return self.denominator_fn(x)
        return super().denominator(x, dist)


def ranked_kernel(a: AttributeFunction | float) -> RankedKernel:
    if not isinstance(a, AttributeFunction):
        a = AttributeFunction.constant(a)
    return RankedKernel(a)


def unranked_kernel(a: AttributeFunction | float) -> UnrankedKernel:
    if not isinstance(a, AttributeFunction):
        a = AttributeFunction.constant(a)
    return UnrankedKernel(a)


# --------------------------------------------------------------------------
# Arrival processes
# --------------------------------------------------------------------------

class ArrivalExplosion(RuntimeError):
    """More arrivals were scheduled than the configured cap allows."""


_INTERARRIVAL_PARAMS = {
    "exponential": ("rate",),
    "deterministic": ("period",),
    "gamma": ("shape", "scale"),
    "uniform": ("low", "high"),
}


@dataclass(frozen=True)
class Interarrival:
    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in _INTERARRIVAL_PARAMS:
            raise ValueError(f"unknown interarrival family {self.family!r}")
        if len(self.params) != len(_INTERARRIVAL_PARAMS[self.family]):
            raise ValueError(f"{self.family} takes {_INTERARRIVAL_PARAMS[self.family]}")
        if self.family == "uniform":
            lo, hi = self.params
            if not 0 <= lo < hi:
                raise ValueError("uniform interarrivals need 0 <= low < high")
        elif not all(v > 0 for v in self.params):
            raise ValueError("interarrival parameters must be positive")

    @property
    def mean(self) -> float:
        p = self.params
        if self.family == "exponential":
            return 1 / p[0]
        if self.family == "deterministic":
            return p[0]
        if self.family == "gamma":
            return p[0] * p[1]
        return (p[0] + p[1]) / 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        f, p = self.family, self.params
        if f == "exponential":
            return rng.exponential(1 / p[0], size)
        if f == "deterministic":
            return np.full(size, p[0])
        if f == "gamma":
            return rng.gamma(p[0], p[1], size)
        return rng.uniform(p[0], p[1], size)


class ArrivalSpec:
    def epochs(self, rng: np.random.Generator, horizon: float,
               max_arrivals: int = 10**8) -> np.ndarray:
        """Arrival epochs in [0, horizon], nondecreasing."""
        raise NotImplementedError


@dataclass(frozen=True)
class PoissonArrivals(ArrivalSpec):
    rate: float

    def __post_init__(self):
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise ValueError("Poisson rate must be finite and >= 0")

    def epochs(self, rng, horizon, max_arrivals=10**8):
        if self.rate == 0:
            return np.empty(0)
        count = rng.poisson(self.rate * horizon)
        if count > max_arrivals:
            raise ArrivalExplosion(f"{count} arrivals exceed cap {max_arrivals}")
        return np.sort(rng.uniform(0.0, horizon, count))


@dataclass(frozen=True)
class RenewalArrivals(ArrivalSpec):
    interarrival: Interarrival
    #: optional closed form of E[s**A(w)] as ``pgf(s, w)``
    pgf: Callable | None = None

    def epochs(self, rng, horizon, max_arrivals=10**8):
        out = []
        total, t = 0, 0.0
        chunk = max(16, int(1.2 * horizon / self.interarrival.mean) + 16)
        while True:
            gaps = self.interarrival.sample(rng, chunk)
            times = t + np.cumsum(gaps)
            keep = times[times <= horizon]
            out.append(keep)
            total += keep.size
            if total > max_arrivals:
                raise ArrivalExplosion(f"more than {max_arrivals} arrivals before horizon")
            if keep.size < chunk:
                break
            t = times[-1]
        return np.concatenate(out)

    def counts(self, rng: np.random.Generator, w: float, size: int) -> np.ndarray:
        """Samples of A(w) for an ordinary renewal process started at 0."""
        return np.array([self.epochs(rng, w).size for _ in range(size)])


@dataclass(frozen=True)
class ScheduledArrivals(ArrivalSpec):
    """Explicit epochs, optionally with forced attributes."""

    times: tuple[float, ...]
    attributes: tuple[float, ...] | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if np.any(t < 0) or np.any(np.diff(t) < 0) or not np.all(np.isfinite(t)):
            raise ValueError("scheduled epochs must be finite, >= 0 and nondecreasing")
        if self.attributes is not None and len(self.attributes) != len(self.times):
            raise ValueError("scheduled attributes must match epochs in length")

    def epochs(self, rng, horizon, max_arrivals=10**8):
        t = np.asarray(self.times, dtype=float)
        t = t[t <= horizon]
        if t.size > max_arrivals:
            raise ArrivalExplosion(f"{t.size} arrivals exceed cap {max_arrivals}")
        return t

    def count_until(self, w: float) -> int:
        return int(np.searchsorted(np.asarray(self.times, dtype=float), w, side="right"))


# --------------------------------------------------------------------------
# Observation windows
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationWindow:
    """Finite disjoint union of half-open intervals [lo, hi)."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = sorted((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if not lo < hi:
                raise ValueError(f"malformed interval ({lo}, {hi})")
        merged: list[list[float]] = []
        for lo, hi in ivs:
            if merged and lo < merged[-1][1]:
                raise ValueError("window intervals overlap")
            if merged and lo == merged[-1][1]:
                merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        object.__setattr__(self, "intervals", tuple((lo, hi) for lo, hi in merged))

    @classmethod
    def of(cls, *intervals) -> ObservationWindow:
        if len(intervals) == 2 and all(np.isscalar(v) for v in intervals):
            intervals = (intervals,)
        return cls(tuple(tuple(iv) for iv in intervals))

    @classmethod
    def empty(cls) -> ObservationWindow:
        return cls(())

    @property
    def sup(self) -> float:
        return self.intervals[-1][1] if self.intervals else -math.inf

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (x >= lo) & (x < hi)
        return out

    def count(self, x) -> int:
        return int(np.count_nonzero(self.contains(x)))

    def union(self, other: ObservationWindow) -> ObservationWindow:
        return ObservationWindow(self.intervals + other.intervals)

    def u_intervals(self, dist: AttributeDistribution) -> list[tuple[float, float]]:
        """The window in quantile coordinates, empty pieces dropped."""
        out = []
        for lo, hi in self.intervals:
            ulo, uhi = float(dist.cdf(lo)), float(dist.cdf(hi))
            if uhi > ulo:
                out.append((ulo, uhi))
        return out

    def mass(self, dist: AttributeDistribution) -> float:
        return sum(hi - lo for lo, hi in self.u_intervals(dist))

    def check(self, dist: AttributeDistribution) -> None:
        if self.intervals and not float(dist.survival(self.sup)) > 0:
            raise DivergenceError(f"window {self.intervals} touches the supremum of E")

    def __str__(self) -> str:
        return "+".join(f"[{lo:g},{hi:g})" for lo, hi in self.intervals) or "{}"


# --------------------------------------------------------------------------
# Mean measures and lifetimes
# --------------------------------------------------------------------------

def integrate_dF(fn: Callable[[float], float], dist: AttributeDistribution,
                 window: ObservationWindow, *, epsabs: float = QUAD_EPSABS,
                 points_x: Sequence[float] = ()) -> tuple[float, float]:
    """Integral of fn(x) dF(x) over the window, done in u = F(x)."""
    points_u = [float(dist.cdf(p)) for p in points_x]
    total, err = 0.0, 0.0
    for ulo, uhi in window.u_intervals(dist):
        v, e = quad(lambda u: fn(float(dist.quantile(u))), ulo, uhi,
                    epsabs=epsabs, points=points_u)
        total += v
        err += e
    return total, err


def mean_measure(dist: AttributeDistribution, kernel: DeletionKernel,
                 window: ObservationWindow, *, epsabs: float = QUAD_EPSABS) -> float:
    """Mean measure of the limiting Poisson process on a window.

    ``int_B dF(x) / d(x)`` with ``d(x) = int p(x, y) dF(y)``; for a ranked
    kernel ``d(x) = a(x) (1 - F(x))``.
    """
    window.check(dist)
    if not window.intervals:
        return 0.0
    for _, uhi in window.u_intervals(dist):
        x_hi = float(dist.quantile(np.nextafter(uhi, 0.0)))
        d_hi = float(kernel.denominator(x_hi, dist))
        if d_hi <= 0 or 1.0 / d_hi > DIVERGENCE_LIMIT:
            raise DivergenceError("intensity is unbounded near the window's upper end")
    value, _ = integrate_dF(lambda x: 1.0 / float(kernel.denominator(x, dist)),
                            dist, window, epsabs=epsabs)
    return value


def lifetime_survival(a_x: float, ell: int) -> float:
    """P{L > ell | X = x} = (1 - a(x)) ** ell."""
    if ell < 0:
        raise ValueError("number of attempts must be >= 0")
    return (1.0 - a_x) ** ell
