"""Scenario files: a TOML document describing one experiment.

Parsing collects every validation problem before failing, each tagged with
the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import (
    ArrivalSpec,
    AttributeDistribution,
    AttributeFunction,
    DeletionKernel,
    DivergenceError,
    Interarrival,
    ObservationWindow,
    PoissonArrivals,
    RankedKernel,
    RenewalArrivals,
    ScheduledArrivals,
    UnrankedKernel,
)
from .theory import Bump, Step, TestFunction, default_test_functions


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class InitialPopulation:
    """Particles present at time 0: an explicit pattern and/or i.i.d. draws."""

    pattern: tuple[float, ...] = ()
    count: int = 0
    dist: AttributeDistribution | None = None

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        parts = [np.asarray(self.pattern, dtype=float)]
        if self.count:
            parts.append(np.asarray(self.dist.sample(rng, self.count), dtype=float))
        return np.concatenate(parts)


@dataclass(frozen=True)
class StationarityBlock:
    functions: tuple[TestFunction, ...] = ()
    expect: str = "poisson"
    tolerance: float = 1e-6


@dataclass(frozen=True)
class ArraysBlock:
    sizes: tuple[int, ...] = (100, 1000, 10000)
    xi_n: int = 2000
    reps: int = 2000
    mc_budget: int = 200_000
    condition_window: ObservationWindow | None = None


@dataclass(frozen=True)
class SojournBlock:
    window: ObservationWindow | None = None
    censor_target: float = 0.005
    min_samples: int = 5000


@dataclass(frozen=True)
class DeparturesBlock:
    burn_in: float = 1000.0


@dataclass(frozen=True)
class ScenarioConfig:
    arrivals: ArrivalSpec
    distribution: AttributeDistribution
    kernel: DeletionKernel
    windows: tuple[ObservationWindow, ...]
    seed: int
    horizon: float = 100.0
    burn_in: float = 0.0
    replications: int = 1
    sampling_epochs: tuple[float, ...] = ()
    max_arrivals: int = 10_000_000
    deletion_mode: str = "bernoulli"
    alpha: float = 0.01
    initial: InitialPopulation = InitialPopulation()
    stationarity: StationarityBlock = StationarityBlock()
    arrays: ArraysBlock = ArraysBlock()
    sojourn: SojournBlock = SojournBlock()
    departures: DeparturesBlock = DeparturesBlock()
    name: str = "scenario"
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def epochs(self) -> tuple[float, ...]:
        return self.sampling_epochs or (self.horizon,)

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    def with_overrides(self, **changes) -> ScenarioConfig:
        """Copy with top-level fields replaced; the digest tracks the change."""
        raw = copy.deepcopy(self.raw)
        for k, v in changes.items():
            if isinstance(v, (int, float, str)):
                raw[k] = v
            else:
                raw.setdefault("_overrides", {})[k] = repr(v)
        return replace(self, raw=raw, **changes)


def config_digest(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

TOP_KEYS = {"name", "seed", "horizon", "burn_in", "replications", "sampling_epochs",
            "max_arrivals", "deletion_mode", "alpha", "output_dir", "windows", "arrivals",
            "distribution", "kernel", "initial", "stationarity", "arrays", "sojourn",
            "departures"}


class _Reader:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, where: str, msg: str) -> None:
        self.errors.append(f"{where}: {msg}")

    def keys(self, table: dict, where: str, allowed: set[str]) -> None:
        for k in table:
            if k not in allowed:
                self.fail(f"{where}.{k}" if where else k, "unknown field")

    def number(self, table: dict, key: str, where: str, default=None, *, integer=False,
               positive=False, nonneg=False):
        path = f"{where}.{key}" if where else key
        if key not in table:
            if default is None:
                self.fail(path, "missing required field")
            return default
        v = table[key]
        ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
        if isinstance(v, bool) or not ok_type:
            self.fail(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return default
        if positive and not v > 0:
            self.fail(path, "must be positive")
        if nonneg and not v >= 0:
            self.fail(path, "must be >= 0")
        return v

    def window(self, value, where: str) -> ObservationWindow | None:
        try:
            if (isinstance(value, list) and len(value) == 2
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
                return ObservationWindow.of(*value)
            if isinstance(value, list) and value and all(
                    isinstance(iv, list) and len(iv) == 2 for iv in value):
                return ObservationWindow.of(*[tuple(iv) for iv in value])
            raise ValueError("expected [lo, hi] or a list of [lo, hi] intervals")
        except (ValueError, TypeError) as exc:
            self.fail(where, f"malformed window {value!r}: {exc}")
            return None


_DIST_KEYS = {"uniform": ("low", "high"), "exponential": ("rate",), "beta": ("alpha", "beta")}


def _distribution(r: _Reader, t: dict, where: str) -> AttributeDistribution | None:
    if not isinstance(t, dict):
        r.fail(where, "expected a table")
        return None
    fam = t.get("family")
    if fam not in _DIST_KEYS:
        r.fail(f"{where}.family", f"unknown distribution family {fam!r}; "
               f"choose one of {sorted(_DIST_KEYS)}")
        return None
    r.keys(t, where, {"family", *_DIST_KEYS[fam]})
    defaults = {"low": 0.0, "high": 1.0, "rate": 1.0}
    vals = [r.number(t, k, where, defaults.get(k)) for k in _DIST_KEYS[fam]]
    if any(v is None for v in vals):
        return None
    try:
        return AttributeDistribution(fam, tuple(float(v) for v in vals))
    except ValueError as exc:
        r.fail(where, str(exc))
        return None


def _kernel(r: _Reader, t: dict, dist) -> DeletionKernel | None:
    where = "kernel"
    fam = t.get("family")
    rank = t.get("rank", "ranked")
    if rank not in ("ranked", "unranked"):
        r.fail(f"{where}.rank", f"expected 'ranked' or 'unranked', got {rank!r}")
    allowed = {"family", "rank"}
    a = None
    try:
        if fam == "constant":
            allowed |= {"a"}
            v = r.number(t, "a", where)
            a = AttributeFunction.constant(v) if v is not None else None
        elif fam == "affine":
            allowed |= {"intercept", "slope", "on"}
            i0 = r.number(t, "intercept", where)
            s1 = r.number(t, "slope", where, 0.0)
            if i0 is not None:
                a = AttributeFunction.affine(i0, s1, on=t.get("on", "x"))
        elif fam == "tabulated":
            allowed |= {"grid", "values"}
            grid, values = t.get("grid"), t.get("values")
            if not isinstance(grid, list) or not isinstance(values, list):
                r.fail(where, "tabulated kernel needs 'grid' and 'values' lists")
            else:
                a = AttributeFunction.tabulated(grid, values)
        else:
            r.fail(f"{where}.family", f"unknown kernel family {fam!r}; "
                   "choose one of ['affine', 'constant', 'tabulated']")
    except (ValueError, TypeError) as exc:
        r.fail(where, str(exc))
        a = None
    r.keys(t, where, allowed)
    if a is None:
        return None
    kernel = RankedKernel(a) if rank == "ranked" else UnrankedKernel(a)
    if dist is not None:
        kernel = kernel.bind(dist)
        try:
            kernel.validate(dist)
        except ValueError as exc:
            r.fail(where, str(exc))
    return kernel


def _arrivals(r: _Reader, t: dict) -> ArrivalSpec | None:
    where = "arrivals"
    kind = t.get("process")
    try:
        if kind == "poisson":
            r.keys(t, where, {"process", "rate"})
            rate = r.number(t, "rate", where, nonneg=True)
            return PoissonArrivals(float(rate)) if rate is not None else None
        if kind == "renewal":
            r.keys(t, where, {"process", "interarrival"})
            ia = t.get("interarrival")
            if not isinstance(ia, dict) or "family" not in ia:
                r.fail(f"{where}.interarrival", "expected a table with a 'family'")
                return None
            names = {"exponential": ("rate",), "deterministic": ("period",),
                     "gamma": ("shape", "scale"), "uniform": ("low", "high")}
            fam = ia["family"]
            if fam not in names:
                r.fail(f"{where}.interarrival.family", f"unknown interarrival family {fam!r}")
                return None
            r.keys(ia, f"{where}.interarrival", {"family", *names[fam]})
            vals = [r.number(ia, k, f"{where}.interarrival") for k in names[fam]]
            if any(v is None for v in vals):
                return None
            return RenewalArrivals(Interarrival(fam, tuple(float(v) for v in vals)))
        if kind == "schedule":
            r.keys(t, where, {"process", "epochs", "attributes"})
            ep = t.get("epochs")
            if not isinstance(ep, list):
                r.fail(f"{where}.epochs", "expected a list of epochs")
                return None
            attrs = t.get("attributes")
            return ScheduledArrivals(tuple(map(float, ep)),
                                     tuple(map(float, attrs)) if attrs is not None else None)
        r.fail(f"{where}.process", f"unknown arrival process {kind!r}; "
               "choose one of ['poisson', 'renewal', 'schedule']")
    except (ValueError, TypeError) as exc:
        r.fail(where, str(exc))
    return None


def _test_function(r: _Reader, t: dict, where: str, dist) -> TestFunction | None:
    kind = t.get("kind")
    try:
        if kind == "step":
            r.keys(t, where, {"kind", "height", "window"})
            win = r.window(t.get("window"), f"{where}.window")
            h = r.number(t, "height", where, 1.0)
            return Step(float(h), win) if win is not None else None
        if kind == "bump":
            r.keys(t, where, {"kind", "height", "center", "center_quantile", "width"})
            h = r.number(t, "height", where, 1.0)
            w = r.number(t, "width", where)
            if "center_quantile" in t and dist is not None:
                c = float(dist.quantile(float(t["center_quantile"])))
            else:
                c = r.number(t, "center", where)
            if None in (w, c):
                return None
            return Bump(float(c), float(w), float(h))
        r.fail(f"{where}.kind", f"unknown test function kind {kind!r}")
    except (ValueError, TypeError) as exc:
        r.fail(where, str(exc))
    return None


def _check_window(r: _Reader, win: ObservationWindow | None, where: str, dist) -> None:
    if win is None or dist is None:
        return
    try:
        win.check(dist)
    except DivergenceError:
        r.fail(where, f"window {win} touches sup E (survival at its upper end is 0)")


def scenario_from_dict(data: dict, *, seed_override: int | None = None) -> ScenarioConfig:
    """Validate a parsed scenario document; raises ConfigError listing every problem."""
    data = copy.deepcopy(data)
    if seed_override is not None:
        data["seed"] = int(seed_override)
    r = _Reader()
    r.keys(data, "", TOP_KEYS)

    seed = data.get("seed")
    if seed is None:
        r.fail("seed", "missing required field (no wall-clock seeding)")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        r.fail("seed", f"expected a nonnegative integer, got {seed!r}")

    dist = _distribution(r, data.get("distribution", {"family": "uniform"}), "distribution")
    kernel = None
    if "kernel" not in data:
        r.fail("kernel", "missing required table")
    elif isinstance(data["kernel"], dict):
        kernel = _kernel(r, data["kernel"], dist)
    else:
        r.fail("kernel", "expected a table")
    arrivals = _arrivals(r, data.get("arrivals", {"process": "poisson", "rate": 1.0}))

    windows = []
    raw_windows = data.get("windows", [])
    if not isinstance(raw_windows, list):
        r.fail("windows", "expected a list of windows")
        raw_windows = []
    for i, w in enumerate(raw_windows):
        win = r.window(w, f"windows[{i}]")
        _check_window(r, win, f"windows[{i}]", dist)
        if win is not None:
            windows.append(win)

    horizon = r.number(data, "horizon", "", 100.0, positive=True)
    burn_in = r.number(data, "burn_in", "", 0.0, nonneg=True)
    reps = r.number(data, "replications", "", 1, integer=True)
    if reps is not None and reps < 1:
        r.fail("replications", "must be >= 1")
    max_arrivals = r.number(data, "max_arrivals", "", 10_000_000, integer=True, positive=True)
    alpha = r.number(data, "alpha", "", 0.01)
    if alpha is not None and not 0 < alpha < 1:
        r.fail("alpha", "must lie in (0, 1)")
    epochs = data.get("sampling_epochs", [])
    if not isinstance(epochs, list) or any(
            isinstance(e, bool) or not isinstance(e, (int, float)) for e in epochs):
        r.fail("sampling_epochs", "expected a list of numbers")
        epochs = []
    elif horizon is not None and any(not 0 <= e <= horizon for e in epochs):
        r.fail("sampling_epochs", "epochs must lie in [0, horizon]")
    mode = data.get("deletion_mode", "bernoulli")
    if mode not in ("bernoulli", "geometric"):
        r.fail("deletion_mode", f"expected 'bernoulli' or 'geometric', got {mode!r}")
    elif mode == "geometric" and kernel is not None and not isinstance(kernel, RankedKernel):
        r.fail("deletion_mode", "geometric lifetimes are only valid for ranked kernels")

    initial = InitialPopulation()
    if "initial" in data:
        t = data["initial"]
        r.keys(t, "initial", {"pattern", "count", "family", "low", "high", "rate", "alpha", "beta"})
        pattern = tuple(float(v) for v in t.get("pattern", []))
        count = r.number(t, "count", "initial", 0, integer=True, nonneg=True)
        idist = None
        if count:
            sub = {k: v for k, v in t.items() if k not in ("pattern", "count")}
            idist = _distribution(r, sub, "initial")
        if dist is not None and pattern and not np.all(dist.in_support(np.array(pattern))):
            r.fail("initial.pattern", "initial attributes must lie in E")
        if dist is not None and idist is not None:
            grid = idist.quantile((np.arange(999) + 0.5) / 999)
            if not np.all(dist.in_support(grid)):
                r.fail("initial", "initial distribution must put its mass inside E")
        initial = InitialPopulation(pattern, count or 0, idist)

    stat = StationarityBlock()
    if "stationarity" in data:
        t = data["stationarity"]
        r.keys(t, "stationarity", {"functions", "expect", "tolerance"})
        fns = []
        for i, ft in enumerate(t.get("functions", [])):
            fn = _test_function(r, ft, f"stationarity.functions[{i}]", dist)
            if fn is not None:
                _check_window(r, ObservationWindow.of(*fn.support), f"stationarity.functions[{i}]",
                              dist)
                fns.append(fn)
        expect = t.get("expect", "poisson")
        if expect not in ("poisson", "non_poisson"):
            r.fail("stationarity.expect", "expected 'poisson' or 'non_poisson'")
        tol = r.number(t, "tolerance", "stationarity", 1e-6, positive=True)
        if not fns and dist is not None:
            fns = default_test_functions(dist)
        stat = StationarityBlock(tuple(fns), expect, tol)
    elif dist is not None:
        stat = StationarityBlock(tuple(default_test_functions(dist)))

    arrays = ArraysBlock()
    if "arrays" in data:
        t = data["arrays"]
        r.keys(t, "arrays", {"sizes", "xi_n", "reps", "mc_budget", "condition_window"})
        sizes = t.get("sizes", list(ArraysBlock.sizes))
        if not isinstance(sizes, list) or not all(isinstance(s, int) and s >= 1 for s in sizes):
            r.fail("arrays.sizes", "expected a list of positive integers")
            sizes = list(ArraysBlock.sizes)
        cw = None
        if "condition_window" in t:
            cw = r.window(t["condition_window"], "arrays.condition_window")
            _check_window(r, cw, "arrays.condition_window", dist)
        arrays = ArraysBlock(tuple(sizes),
                             r.number(t, "xi_n", "arrays", 2000, integer=True, positive=True),
                             r.number(t, "reps", "arrays", 2000, integer=True, positive=True),
                             r.number(t, "mc_budget", "arrays", 200_000, integer=True, positive=True),
                             cw)

    sojourn = SojournBlock()
    if "sojourn" in data:
        t = data["sojourn"]
        r.keys(t, "sojourn", {"window", "censor_target", "min_samples"})
        win = r.window(t["window"], "sojourn.window") if "window" in t else None
        _check_window(r, win, "sojourn.window", dist)
        sojourn = SojournBlock(win, r.number(t, "censor_target", "sojourn", 0.005, positive=True),
                               r.number(t, "min_samples", "sojourn", 5000, integer=True,
                                        positive=True))

    departures = DeparturesBlock()
    if "departures" in data:
        t = data["departures"]
        r.keys(t, "departures", {"burn_in"})
        departures = DeparturesBlock(r.number(t, "burn_in", "departures", 1000.0, nonneg=True))

    if r.errors:
        raise ConfigError(r.errors)
    return ScenarioConfig(
        arrivals=arrivals, distribution=dist, kernel=kernel, windows=tuple(windows),
        seed=int(seed), horizon=float(horizon), burn_in=float(burn_in), replications=int(reps),
        sampling_epochs=tuple(float(e) for e in epochs), max_arrivals=int(max_arrivals),
        deletion_mode=mode, alpha=float(alpha), initial=initial, stationarity=stat,
        arrays=arrays, sojourn=sojourn, departures=departures,
        name=str(data.get("name", "scenario")), output_dir=str(data.get("output_dir", "out")),
        raw=data,
    )


def parse_scenario(path: str | Path, *, seed_override: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        # duplicate keys and syntax errors carry "(at line L, column C)"
        raise ConfigError([f"{path.name}: {exc}"]) from None
    return scenario_from_dict(data, seed_override=seed_override)


def load_text(text: str, **kw: Any) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([str(exc)]) from None
    return scenario_from_dict(data, **kw)
