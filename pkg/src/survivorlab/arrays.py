"""Triangular arrays of thinned points and the random-permutation construction.

A row is generated constructively: the conditioning data (attributes and an
arrival order) are drawn first, then survival indicators are drawn from
independent lifetimes given that data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from . import _engine
from .model import AttributeDistribution, AttributeFunction, ObservationWindow, quad
from .stats import DEFAULT_ALPHA, TestReport, total_variation_poisson

EXACT_MAX_N = 8


def survival_r(a_x, nu):
    """Vectorized ``[1 - (1 - a)**nu] / (nu * a)``."""
    a_x = np.asarray(a_x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = -np.expm1(nu * np.log1p(-a_x)) / (nu * a_x)
    return np.where(a_x == 1.0, 1.0 / nu, r)


# --------------------------------------------------------------------------
# Permutation construction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PermutationRealization:
    n: int
    attributes: np.ndarray
    permutation: np.ndarray   # arrival position of each particle, 0-based
    q_values: np.ndarray
    nu_values: np.ndarray
    survivors: np.ndarray     # bool

    @property
    def points(self) -> np.ndarray:
        return self.attributes[self.survivors]


@dataclass(frozen=True)
class RealizationBatch:
    """``reps`` independent realizations stacked row-wise."""

    attributes: np.ndarray
    permutation: np.ndarray
    q_values: np.ndarray
    nu_values: np.ndarray
    lifetimes: np.ndarray
    survivors: np.ndarray

    def __len__(self) -> int:
        return self.attributes.shape[0]

    def row(self, i: int) -> PermutationRealization:
        return PermutationRealization(self.attributes.shape[1], self.attributes[i],
                                      self.permutation[i], self.q_values[i],
                                      self.nu_values[i], self.survivors[i])

    def window_counts(self, windows: Sequence[ObservationWindow]) -> np.ndarray:
        out = np.empty((len(self), len(windows)), dtype=np.int64)
        for j, w in enumerate(windows):
            out[:, j] = np.count_nonzero(w.contains(self.attributes) & self.survivors, axis=1)
        return out


def _nu(attrs: np.ndarray) -> np.ndarray:
    # attributes are a.s. distinct, so nu is n minus the 0-based rank
    n = attrs.shape[1]
    ranks = np.argsort(np.argsort(attrs, axis=1), axis=1)
    return n - ranks


def sample_realizations(n: int, dist: AttributeDistribution, a: AttributeFunction,
                        reps: int, rng: np.random.Generator) -> RealizationBatch:
    """Draw ``reps`` independent rows of the permutation construction."""
    if n < 1:
        raise ValueError("n must be >= 1")
    attrs = np.asarray(dist.sample(rng, (reps, n)), dtype=float).reshape(reps, n)
    order = rng.permuted(np.tile(np.arange(n, dtype=np.int64), (reps, 1)), axis=1)
    q = _engine.later_higher_counts(attrs, order)
    lifetimes = rng.geometric(np.asarray(a(attrs), dtype=float).reshape(reps, n))
    return RealizationBatch(attrs, order, q, _nu(attrs), lifetimes, lifetimes > q)


def permutation_rank_realization(n: int, dist: AttributeDistribution, a: AttributeFunction,
                                 rng: np.random.Generator) -> PermutationRealization:
    return sample_realizations(n, dist, a, 1, rng).row(0)


def right_to_left_records(attributes: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    """Indicator of particles that no later arrival exceeds."""
    seq = np.asarray(attributes)[np.argsort(permutation)]
    later_max = np.maximum.accumulate(seq[::-1])[::-1]
    rec_seq = np.ones(seq.size, dtype=bool)
    rec_seq[:-1] = seq[:-1] > later_max[1:]
    out = np.empty_like(rec_seq)
    out[np.argsort(permutation)] = rec_seq
    return out


def xi_n_limit_experiment(n: int, dist: AttributeDistribution, a: AttributeFunction,
                          windows: Sequence[ObservationWindow], reps: int,
                          rng: np.random.Generator, chunk: int = 250) -> np.ndarray:
    """Window counts of ``reps`` independent realizations, shape (reps, windows)."""
    for w in windows:
        w.check(dist)
    out = []
    left = reps
    while left > 0:
        m = min(chunk, left)
        out.append(sample_realizations(n, dist, a, m, rng).window_counts(windows))
        left -= m
    return np.concatenate(out) if out else np.zeros((0, len(windows)), dtype=np.int64)


# --------------------------------------------------------------------------
# Exact law of the later-higher counts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactQLaw:
    nu: tuple[int, ...]
    joint: dict[tuple[int, ...], Fraction]
    marginals: tuple[dict[int, Fraction], ...]

    def is_uniform_product(self) -> bool:
        cell = Fraction(1, math.prod(self.nu))
        cells = math.prod(self.nu)
        return len(self.joint) == cells and all(p == cell for p in self.joint.values())


def claim29_exact_law(ranks: Sequence[int]) -> ExactQLaw:
    """Joint law of the later-higher counts over all equally likely arrival orders.

    ``ranks[k]`` is the attribute rank of index k (any strictly ordered
    values). Enumerates all n! orders, so n is capped at 8.
    """
    ranks = np.asarray(ranks)
    n = ranks.size
    if n < 1:
        raise ValueError("need at least one index")
    if n > EXACT_MAX_N:
        raise ValueError(f"exact enumeration is limited to n <= {EXACT_MAX_N}; "
                         "use claim29_monte_carlo for larger n")
    if np.unique(ranks).size != n:
        raise ValueError("ranks must be a strict order")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    higher = ranks[None, :] > ranks[:, None]            # higher[k, j]: j above k
    later = perms[:, None, :] > perms[:, :, None]        # later[p, k, j]
    q = np.count_nonzero(later & higher[None], axis=2)
    total = perms.shape[0]
    cells, counts = np.unique(q, axis=0, return_counts=True)
    joint = {tuple(int(v) for v in c): Fraction(int(m), total) for c, m in zip(cells, counts)}
    nu = tuple(int(v) for v in 1 + higher.sum(axis=1))
    marginals = []
    for k in range(n):
        vals, cnt = np.unique(q[:, k], return_counts=True)
        marginals.append({int(v): Fraction(int(m), total) for v, m in zip(vals, cnt)})
    law = ExactQLaw(nu, joint, tuple(marginals))
    for k, m in enumerate(law.marginals):
        assert m == {v: Fraction(1, law.nu[k]) for v in range(law.nu[k])}
    assert law.is_uniform_product()
    return law


def claim29_monte_carlo(n: int, reps: int, rng: np.random.Generator,
                        alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Chi-square check of uniform marginals and pairwise independence for large n.

    Index k holds rank k (0 lowest). Tests every marginal and the pair of
    the two lowest ranks; the reported p-value is Bonferroni-adjusted.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    attrs = np.tile(np.arange(n, dtype=float), (reps, 1))
    order = rng.permuted(np.tile(np.arange(n, dtype=np.int64), (reps, 1)), axis=1)
    q = _engine.later_higher_counts(attrs, order)
    pvals, stats_ = [], []
    for k in range(n - 1):
        nu = n - k
        obs = np.bincount(q[:, k], minlength=nu)
        res = sps.chisquare(obs)
        pvals.append(res.pvalue)
        stats_.append(res.statistic)
    table = np.zeros((n, n - 1))
    np.add.at(table, (q[:, 0], q[:, 1]), 1)
    res = sps.chi2_contingency(table, correction=False)
    pvals.append(res.pvalue)
    stats_.append(res.statistic)
    p = min(1.0, min(pvals) * len(pvals))
    return TestReport(float(max(stats_)), float(p), int(reps),
                      f"later-higher counts, {len(pvals)} chi-square tests, Bonferroni", alpha)


# --------------------------------------------------------------------------
# Deterministic log-sum bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GapBound:
    gap: float
    bound9: float
    bound10: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound9 and self.gap <= self.bound10


def _log_gap_terms(y: np.ndarray) -> np.ndarray:
    # -log(1 - y) - y, with a short series where the direct form cancels
    small = y < 1e-4
    out = np.empty_like(y)
    ys = y[small]
    out[small] = ys**2 * (0.5 + ys * (1 / 3 + ys * (0.25 + ys * 0.2)))
    yl = y[~small]
    out[~small] = -np.log1p(-yl) - yl
    return out


def lemma2_gap_bound(Y: Sequence[float], c: float) -> GapBound:
    """Gap between -sum log(1 - Y) and sum Y, with its two quadratic upper bounds."""
    y = np.asarray(Y, dtype=float)
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    if y.ndim != 1 or y.size == 0:
        raise ValueError("Y must be a nonempty sequence")
    if np.any(~(y > 0)) or np.any(y > c):
        raise ValueError("every Y must lie in (0, c]")
    gap = math.fsum(_log_gap_terms(y))
    bound9 = math.fsum(y * y) / (1 - c)
    bound10 = float(y.max()) / (1 - c) * math.fsum(y)
    out = GapBound(gap, bound9, bound10)
    assert out.holds, out
    return out


# --------------------------------------------------------------------------
# Conditions for the thinned-array limit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionValues:
    val22: float
    val23: float
    se22: float = 0.0
    se23: float = 0.0
    method: str = "exact"


def _inner_moments(n: int, a_x: float, sf: float) -> tuple[float, float]:
    s = np.arange(n)
    pmf = sps.binom.pmf(s, n - 1, sf)
    r = survival_r(a_x, s + 1)
    target = 1.0 / (a_x * sf)
    return n * float(pmf @ (r * r)), float(pmf @ np.abs(n * r - target))


def corollary5_condition_values(n: int, dist: AttributeDistribution, a: AttributeFunction,
                                B: ObservationWindow, mc_budget: int = 200_000,
                                rng: np.random.Generator | None = None,
                                exact_max_n: int = 1000) -> ConditionValues:
    """Both limit conditions for the thinned array at size n over window B.

    ``val22 = int_B n E[r^2 | X = x] dF`` and
    ``val23 = int_B E|n r - 1/(a F_bar)| dF`` where r is the conditional
    survival given the number of attributes at or above x. Exact binomial
    summation inside adaptive quadrature for n <= exact_max_n, Monte Carlo
    over (X, S) pairs with standard errors above that.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    B.check(dist)
    pieces = B.u_intervals(dist)
    if n <= exact_max_n:
        def both(u):
            x = float(dist.quantile(u))
            return _inner_moments(n, float(a(x)), float(dist.survival(x)))

        v22 = v23 = 0.0
        for lo, hi in pieces:
            v22 += quad(lambda u: both(u)[0], lo, hi, epsabs=1e-10, epsrel=1e-8)[0]
            # pmf roundoff caps the attainable accuracy near 5e-6
            v23 += quad(lambda u: both(u)[1], lo, hi, epsabs=1e-5, epsrel=1e-5, limit=2000)[0]
        return ConditionValues(v22, v23)

    if rng is None:
        raise ValueError("Monte Carlo mode needs an rng")
    mass = sum(hi - lo for lo, hi in pieces)
    widths = np.array([hi - lo for lo, hi in pieces])
    piece = rng.choice(len(pieces), size=mc_budget, p=widths / widths.sum())
    lows = np.array([lo for lo, _ in pieces])
    u = lows[piece] + widths[piece] * rng.random(mc_budget)
    x = np.asarray(dist.quantile(u), dtype=float)
    sf = np.asarray(dist.survival(x), dtype=float)
    a_x = np.asarray(a(x), dtype=float)
    s = rng.binomial(n - 1, sf)
    r = survival_r(a_x, s + 1)
    g22 = mass * n * r * r
    g23 = mass * np.abs(n * r - 1.0 / (a_x * sf))
    root = math.sqrt(mc_budget)
    return ConditionValues(float(g22.mean()), float(g23.mean()),
                           float(g22.std(ddof=1) / root), float(g23.std(ddof=1) / root),
                           f"monte carlo, {mc_budget} draws")


# --------------------------------------------------------------------------
# Bernoulli arrays
# --------------------------------------------------------------------------

ProbRule = Callable[[int, np.random.Generator], np.ndarray]


def iid_rule(mu: float) -> ProbRule:
    """Every entry of row n equals mu / n."""
    def rule(n, rng):
        return np.full(n, min(1.0, mu / n))
    rule.constant = lambda n: min(1.0, mu / n)
    return rule


def exchangeable_rule(mu: float) -> ProbRule:
    """Row n holds min(1, mu W_k / n) with W_k i.i.d. unit exponentials."""
    def rule(n, rng):
        return np.minimum(1.0, mu * rng.exponential(size=n) / n)
    return rule


def fixed_rule(probs: Sequence[float]) -> ProbRule:
    p = np.asarray(probs, dtype=float)

    def rule(n, rng):
        if n != p.size:
            raise ValueError(f"fixed rule has {p.size} entries, row size is {n}")
        return p
    return rule


@dataclass(frozen=True)
class ArrayLimit:
    samples: np.ndarray
    pmf: np.ndarray
    tv: float
    mu: float


@dataclass(frozen=True)
class ArrayRow:
    n: int
    r: np.ndarray
    indicators: np.ndarray
    points: np.ndarray


def bernoulli_row(n: int, prob_rule: ProbRule, rng: np.random.Generator,
                  attributes: np.ndarray | None = None) -> ArrayRow:
    """One row: draw probabilities, then independent indicators given them."""
    r = np.asarray(prob_rule(n, rng), dtype=float)
    u = rng.random(n) < r
    pts = np.arange(n, dtype=float) if attributes is None else np.asarray(attributes)
    return ArrayRow(n, r, u, pts[u])


def bernoulli_array_limit(n: int, prob_rule: ProbRule, reps: int, rng: np.random.Generator,
                          mu: float | None = None) -> ArrayLimit:
    """Empirical law of the row sum over ``reps`` rows and its TV distance to Poisson(mu).

    ``mu`` defaults to the expected row sum estimated from the drawn rows.
    """
    const = getattr(prob_rule, "constant", None)
    if const is not None:
        p = const(n)
        samples = rng.binomial(n, p, size=reps)
        mean = n * p
    else:
        samples = np.empty(reps, dtype=np.int64)
        total = 0.0
        for i in range(reps):
            r = np.asarray(prob_rule(n, rng), dtype=float)
            total += float(r.sum())
            samples[i] = np.count_nonzero(rng.random(n) < r)
        mean = total / reps
    mu = mean if mu is None else mu
    pmf = np.bincount(samples) / reps
    return ArrayLimit(samples, pmf, total_variation_poisson(samples, mu), mu)
