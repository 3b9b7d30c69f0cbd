"""Goodness-of-fit and dependence tests that turn limit theorems into pass/fail checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

DEFAULT_ALPHA = 0.01
MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    statistic: float
    p_value: float
    sample_size: int
    method: str
    alpha: float = DEFAULT_ALPHA

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d


def _counts(counts, minimum: int) -> np.ndarray:
    arr = np.asarray(counts)
    if arr.ndim != 1:
        raise ValueError("counts must be one-dimensional")
    if arr.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {arr.size}")
    if np.any(arr < 0) or not np.all(arr == np.floor(arr)):
        raise ValueError("counts must be nonnegative integers")
    return arr.astype(np.int64)


def merge_cells(expected: np.ndarray, minimum: float = MIN_EXPECTED) -> list[tuple[int, int]]:
    """Group consecutive cells so each group's expected count is >= minimum.

    Returns half-open index ranges. A short remainder at the right end is
    folded into the previous group.
    """
    groups: list[list[int]] = []
    start, acc = 0, 0.0
    for i, e in enumerate(expected):
        acc += e
        if acc >= minimum:
            groups.append([start, i + 1])
            start, acc = i + 1, 0.0
    if start < len(expected):
        if groups:
            groups[-1][1] = len(expected)
        else:
            groups.append([start, len(expected)])
    return [(a, b) for a, b in groups]


def poisson_cells(mean: float, size: int) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Merged cells for a Poisson(mean) chi-square test; the last cell is open-ended."""
    top = int(sps.poisson.isf(1e-12, mean)) + 2
    pmf = sps.poisson.pmf(np.arange(top), mean)
    pmf[-1] += sps.poisson.sf(top - 1, mean)
    groups = merge_cells(size * pmf)
    probs = np.array([pmf[a:b].sum() for a, b in groups])
    return groups, probs


def poisson_gof(counts, mean: float, alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Pearson chi-square of counts against Poisson(mean); the mean is not fitted."""
    arr = _counts(counts, 50)
    if not mean > 0:
        raise ValueError("mean must be positive")
    groups, probs = poisson_cells(mean, arr.size)
    if len(groups) < 2:
        raise ValueError("fewer than 2 cells after merging; sample too small for this mean")
    top = groups[-1][0]
    observed = np.array([np.count_nonzero((arr >= a) & (arr < b)) for a, b in groups[:-1]]
                        + [np.count_nonzero(arr >= top)])
    expected = arr.size * probs
    stat = float(np.sum((observed - expected) ** 2 / expected))
    df = len(groups) - 1
    return TestReport(stat, float(sps.chi2.sf(stat, df)), int(arr.size),
                      f"Pearson chi-square vs Poisson({mean:.6g}), {len(groups)} cells, df={df}",
                      alpha)


@dataclass(frozen=True)
class Dispersion:
    index: float
    ci_low: float
    ci_high: float
    sample_size: int

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def dispersion_index(counts, alpha: float = DEFAULT_ALPHA) -> Dispersion:
    """Sample variance over sample mean, with a normal CI of half-width z*sqrt(2/(n-1))."""
    arr = _counts(counts, 50).astype(float)
    m = arr.mean()
    if m == 0:
        raise ValueError("dispersion index undefined for zero mean")
    d = float(arr.var(ddof=1) / m)
    half = sps.norm.isf(alpha / 2) * math.sqrt(2.0 / (arr.size - 1))
    return Dispersion(d, d - half, d + half, int(arr.size))


def dispersion_test(counts, alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Two-sided z-test of dispersion index == 1."""
    disp = dispersion_index(counts, alpha)
    z = (disp.index - 1.0) / math.sqrt(2.0 / (disp.sample_size - 1))
    return TestReport(disp.index, float(2 * sps.norm.sf(abs(z))), disp.sample_size,
                      "dispersion index, normal approximation", alpha)


def cross_window_dependence(counts_a, counts_b, alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Pearson correlation of paired counts, Fisher-z test against zero.

    The statistic reported is the correlation itself.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired sequences must have equal length")
    if a.size < 100:
        raise ValueError("need at least 100 pairs")
    if a.std() == 0 or b.std() == 0:
        raise ValueError("zero variance in one of the inputs")
    r = float(np.corrcoef(a, b)[0, 1])
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        z = math.atanh(r) * math.sqrt(a.size - 3)
        p = float(2 * sps.norm.sf(abs(z)))
    return TestReport(r, p, int(a.size), "Pearson correlation, Fisher z", alpha)


def ks_exponential_unit(samples, alpha: float = DEFAULT_ALPHA) -> TestReport:
    """One-sample KS against the unit exponential, asymptotic p-value."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 200:
        raise ValueError("need at least 200 samples")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be positive and finite")
    res = sps.kstest(x, "expon", method="asymp")
    return TestReport(float(res.statistic), float(res.pvalue), int(x.size),
                      "Kolmogorov-Smirnov vs Exp(1), asymptotic", alpha)


def homogeneity_test(counts_a, counts_b, alpha: float = DEFAULT_ALPHA) -> TestReport:
    """Two-sample chi-square on count histograms, cells merged to expected >= 5."""
    a = _counts(counts_a, 100)
    b = _counts(counts_b, 100)
    top = int(max(a.max(), b.max())) + 1
    ha = np.bincount(a, minlength=top).astype(float)
    hb = np.bincount(b, minlength=top).astype(float)
    pooled = ha + hb
    # smallest expected count in a cell is for the smaller sample
    share = min(a.size, b.size) / (a.size + b.size)
    groups = merge_cells(share * pooled)
    if len(groups) < 2:
        raise ValueError("degenerate pooled histogram: fewer than 2 cells after merging")
    table = np.array([[h[s:e].sum() for s, e in groups] for h in (ha, hb)])
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0) / table.sum()
    stat = float(np.sum((table - expected) ** 2 / expected))
    df = len(groups) - 1
    return TestReport(stat, float(sps.chi2.sf(stat, df)), int(a.size + b.size),
                      f"two-sample chi-square, {len(groups)} cells, df={df}", alpha)


def mean_within(samples, target: float, n_se: float = 3.0) -> tuple[bool, float, float]:
    """Whether the sample mean lies within n_se standard errors of target."""
    x = np.asarray(samples, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    m = float(x.mean())
    return abs(m - target) <= n_se * se, m, se


def total_variation_poisson(samples, mean: float) -> float:
    """TV distance between the empirical law of samples and Poisson(mean)."""
    x = np.asarray(samples, dtype=np.int64)
    if mean == 0:
        return float(np.count_nonzero(x != 0) / x.size)
    top = int(max(x.max(), sps.poisson.isf(1e-15, mean))) + 1
    emp = np.bincount(x, minlength=top) / x.size
    pmf = sps.poisson.pmf(np.arange(top), mean)
    tail = sps.poisson.sf(top - 1, mean)
    return float(0.5 * (np.abs(emp - pmf).sum() + tail))
