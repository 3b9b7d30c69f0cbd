"""The twelve end-to-end acceptance criteria.

Every criterion is a function of a master seed returning a
:class:`CriterionResult`. Targets are closed forms or exact enumerations,
never simulation output.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .arrays import (
    claim29_exact_law,
    corollary5_condition_values,
    lemma2_gap_bound,
    right_to_left_records,
    sample_realizations,
    xi_n_limit_experiment,
)
from .config import ScenarioConfig, scenario_from_dict
from .experiments import departures, sojourn
from .model import (
    AttributeDistribution,
    AttributeFunction,
    ObservationWindow,
    ranked_kernel,
    unranked_kernel,
)
from .sim import final_counts, replication_rng, run_replications
from .stats import (
    cross_window_dependence,
    dispersion_index,
    dispersion_test,
    homogeneity_test,
    ks_exponential_unit,
    mean_within,
    poisson_gof,
)
from .theory import (
    Step,
    binomial_size_bias_identity,
    default_test_functions,
    stationarity_residual,
    stationarity_sweep,
)

DEFAULT_SEED = 20240917
ALPHA = 0.01


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": bool(self.passed),
                "seconds": round(self.seconds, 3), "detail": self.detail}


def _scenario(seed: int, **over) -> ScenarioConfig:
    base = {
        "name": "acceptance",
        "seed": seed,
        "horizon": 2000.0,
        "replications": 1000,
        "windows": [[0.0, 0.25], [0.25, 0.5], [0.5, 0.75]],
        "arrivals": {"process": "poisson", "rate": 1.0},
        "distribution": {"family": "uniform", "low": 0.0, "high": 1.0},
        "kernel": {"rank": "ranked", "family": "constant", "a": 0.2},
    }
    base.update(over)
    return scenario_from_dict(base)


def _seed(master: int, number: int, arm: int = 0) -> int:
    return master * 100 + number * 4 + arm


# --------------------------------------------------------------------------

def criterion_1(seed: int, jobs: int = 1) -> CriterionResult:
    cfg = _scenario(_seed(seed, 1))
    counts = np.stack(run_replications(cfg, final_counts, jobs=jobs))
    targets = [5 * math.log(4 / 3), 5 * math.log(3 / 2), 5 * math.log(2)]
    detail, ok = {}, True
    for j, (w, target) in enumerate(zip(cfg.windows, targets)):
        c = counts[:, j]
        within, m, se = mean_within(c, target)
        gof = poisson_gof(c, target, ALPHA)
        disp = dispersion_index(c, ALPHA)
        ok &= within and gof.passed and 0.9 <= disp.index <= 1.1
        detail[str(w)] = {"mean": m, "stderr": se, "target": target, "gof_p": gof.p_value,
                          "dispersion": disp.index}
    corr = {}
    for i, j in itertools.combinations(range(3), 2):
        r = cross_window_dependence(counts[:, i], counts[:, j], ALPHA).statistic
        corr[f"{i},{j}"] = r
        ok &= abs(r) < 0.1
    detail["correlations"] = corr
    return CriterionResult(1, "Poisson limit of window counts", ok, detail)


def criterion_2(seed: int, jobs: int = 1) -> CriterionResult:
    checked = 0
    ok = True
    for n in range(1, 7):
        for ranks in itertools.permutations(range(n)):
            law = claim29_exact_law(ranks)
            cell = Fraction(1, math.prod(law.nu))
            ok &= len(law.joint) == math.prod(law.nu)
            ok &= all(p == cell for p in law.joint.values())
            checked += 1
    return CriterionResult(2, "exact product law of later-higher counts", ok,
                           {"rankings_checked": checked})


def criterion_3(seed: int, jobs: int = 1) -> CriterionResult:
    fns: dict[str, Callable[[int], float]] = {
        "constant": lambda k: 1.0, "identity": lambda k: float(k),
        "square": lambda k: float(k * k), "indicator_ge_1": lambda k: float(k >= 1)}
    worst = 0.0
    for n in (2, 5, 10, 20):
        for p in (0.1, 0.5, 0.9, 1.0):
            for f in fns.values():
                lhs, rhs = binomial_size_bias_identity(n, p, f)
                worst = max(worst, abs(lhs - rhs))
    return CriterionResult(3, "binomial size-bias identity", worst <= 1e-12,
                           {"max_abs_difference": worst})


def criterion_4(seed: int, jobs: int = 1) -> CriterionResult:
    uni = AttributeDistribution.uniform()
    expo = AttributeDistribution.exponential(1.0)
    cases = {
        "uniform/constant": (uni, AttributeFunction.constant(0.5)),
        "uniform/affine": (uni, AttributeFunction.affine(0.2, 0.6)),
        "exponential/constant": (expo, AttributeFunction.constant(0.3)),
        "exponential/affine-cdf": (expo, AttributeFunction.affine(0.9, -0.6, on="cdf")),
    }
    detail, ok = {}, True
    for name, (dist, a) in cases.items():
        kernel = ranked_kernel(a).bind(dist)
        rows = stationarity_sweep(kernel, dist, default_test_functions(dist))
        worst = max(r.residual for r in rows)
        detail[name] = worst
        ok &= len(rows) == 10 and worst < 1e-6
    q = 0.5 * math.exp(-1) + 0.5
    oracle = 1.0 - q * math.exp(1 - q)
    res = stationarity_residual(unranked_kernel(0.5), uni, Step(1.0, ObservationWindow.of(0, 0.5)))
    detail["unranked_step"] = {"residual": res, "oracle": oracle}
    ok &= abs(res - oracle) < 1e-3 and abs(res - 0.0619) < 1e-3
    return CriterionResult(4, "stationarity functional residuals", ok, detail)


def criterion_5(seed: int, jobs: int = 1) -> CriterionResult:
    cfg = _scenario(_seed(seed, 5), windows=[[0.3, 0.7]],
                    kernel={"rank": "ranked", "family": "constant", "a": 0.5},
                    sojourn={"window": [0.3, 0.7], "censor_target": 0.005, "min_samples": 5000})
    rep = sojourn(cfg, jobs)
    return CriterionResult(5, "exponential sojourn law", rep.passed,
                           {**rep.summary, "checks": [c.to_dict() for c in rep.checks]})


def criterion_6(seed: int, jobs: int = 1) -> CriterionResult:
    common = dict(windows=[[0.0, 0.75]], replications=500)
    empty = _scenario(_seed(seed, 6, 0), **common)
    seeded = _scenario(_seed(seed, 6, 1), **common,
                       initial={"count": 200, "family": "uniform", "low": 0.0, "high": 0.9})
    a = np.stack(run_replications(empty, final_counts, jobs=jobs))[:, 0]
    b = np.stack(run_replications(seeded, final_counts, jobs=jobs))[:, 0]
    rep = homogeneity_test(a, b, ALPHA)
    return CriterionResult(6, "insensitivity to the initial population", rep.passed,
                           {**rep.to_dict(), "mean_empty": a.mean(), "mean_seeded": b.mean()})


def criterion_7(seed: int, jobs: int = 1) -> CriterionResult:
    cfg = _scenario(_seed(seed, 7), horizon=3000.0, replications=50,
                    windows=[[0.0, 0.25], [0.25, 0.5]], departures={"burn_in": 1000.0})
    rep = departures(cfg, jobs)
    return CriterionResult(7, "batch departures", rep.passed,
                           {**rep.summary, "checks": [c.to_dict() for c in rep.checks]})


def criterion_8(seed: int, jobs: int = 1) -> CriterionResult:
    rng = replication_rng(seed, 8)
    violations = 0
    for _ in range(10_000):
        c = float(rng.uniform(0.0, 0.9))
        while c == 0.0:
            c = float(rng.uniform(0.0, 0.9))
        size = int(rng.integers(1, 101))
        y = c * (1.0 - rng.random(size))
        if not lemma2_gap_bound(y, c).holds:
            violations += 1
    return CriterionResult(8, "log-sum gap bounds", violations == 0,
                           {"rows": 10_000, "violations": violations})


def criterion_9(seed: int, jobs: int = 1) -> CriterionResult:
    one = AttributeFunction.constant(1.0)
    # brute force at n=3: survivors are the right-to-left records
    total = Fraction(0)
    for perm in itertools.permutations(range(3)):
        total += int(right_to_left_records(np.arange(3.0), np.array(perm)).sum())
    brute = total / 6
    uni = AttributeDistribution.uniform()
    rng = replication_rng(seed, 9)
    surv = sample_realizations(10, uni, one, 100_000, rng).survivors.sum(axis=1)
    h10 = math.fsum(1 / k for k in range(1, 11))
    within, m, se = mean_within(surv, h10)
    counts = xi_n_limit_experiment(2000, uni, AttributeFunction.constant(0.5),
                                   [ObservationWindow.of(0, 0.8)], 2000,
                                   replication_rng(seed, 90))[:, 0]
    gof = poisson_gof(counts, 2 * math.log(5), ALPHA)
    ok = brute == Fraction(11, 6) and within and gof.passed
    return CriterionResult(9, "permutation construction", ok,
                           {"brute_n3": str(brute), "mean_n10": m, "stderr": se, "target": h10,
                            "xi_n_mean": counts.mean(), "gof_p": gof.p_value})


def criterion_10(seed: int, jobs: int = 1) -> CriterionResult:
    uni = AttributeDistribution.uniform()
    a = AttributeFunction.constant(0.5)
    B = ObservationWindow.of(0, 0.8)
    vals = [corollary5_condition_values(n, uni, a, B, 200_000, replication_rng(seed, 100 + i))
            for i, n in enumerate((100, 1000, 10_000))]
    v22 = [v.val22 for v in vals]
    ratios = [x / y for x, y in zip(v22, v22[1:])]
    last = vals[-1]
    ok = (all(x > y for x, y in zip(v22, v22[1:]))
          and all(5.0 <= r <= 20.0 for r in ratios)
          and last.val23 + 3 * last.se23 < 0.05)
    return CriterionResult(10, "decay of the array-limit conditions", ok,
                           {"val22": v22, "ratios": ratios, "val23": last.val23,
                            "val23_stderr": last.se23, "method_1e4": last.method})


def criterion_11(seed: int, jobs: int = 1) -> CriterionResult:
    cfg = _scenario(_seed(seed, 11), horizon=500.0, replications=500,
                    windows=[[0.0, 0.5], [0.5, 0.8]],
                    kernel={"rank": "ranked", "family": "constant", "a": 0.3})
    bern = np.stack(run_replications(cfg, final_counts, jobs=jobs, mode="bernoulli"))
    geo = np.stack(run_replications(cfg, final_counts, jobs=jobs, mode="geometric",
                                    start=cfg.replications))
    detail, ok = {}, True
    for j, w in enumerate(cfg.windows):
        rep = homogeneity_test(bern[:, j], geo[:, j], ALPHA)
        detail[str(w)] = rep.to_dict()
        ok &= rep.passed
    return CriterionResult(11, "Bernoulli trials vs geometric lifetimes", ok, detail)


def _rejections(test: Callable[[np.random.Generator], bool], rng, reps: int) -> int:
    return sum(not test(rng) for _ in range(reps))


def criterion_12(seed: int, jobs: int = 1) -> CriterionResult:
    reps = 1000
    band = 3 * math.sqrt(ALPHA * (1 - ALPHA) / reps)
    rng = replication_rng(seed, 12)
    tests = {
        "poisson_gof": lambda g: poisson_gof(g.poisson(3.21888, 2000), 3.21888, ALPHA).passed,
        "dispersion": lambda g: dispersion_test(g.poisson(5.0, 1000), ALPHA).passed,
        "cross_window": lambda g: cross_window_dependence(g.poisson(3.0, 1000),
                                                          g.poisson(2.0, 1000), ALPHA).passed,
        "ks_exponential": lambda g: ks_exponential_unit(g.exponential(size=1000), ALPHA).passed,
        "homogeneity": lambda g: homogeneity_test(g.poisson(3.0, 500), g.poisson(3.0, 500),
                                                  ALPHA).passed,
    }
    detail, ok = {}, True
    for name, test in tests.items():
        rate = _rejections(test, rng, reps) / reps
        detail[name] = rate
        ok &= abs(rate - ALPHA) <= band
    detail["band"] = band
    return CriterionResult(12, "null calibration of the tests", ok, detail)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def run_criterion(number: int, seed: int = DEFAULT_SEED, jobs: int = 1) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[number - 1](seed, jobs)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(seed: int = DEFAULT_SEED, jobs: int = 1, echo: Callable[[str], None] | None = None,
            only: list[int] | None = None) -> list[CriterionResult]:
    out = []
    for k in only or range(1, len(CRITERIA) + 1):
        res = run_criterion(k, seed, jobs)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
