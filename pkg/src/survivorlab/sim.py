"""Event simulation of the particle-survivor process.

Two engines share one record format. Kernels whose deletion probability is
a function of the candidate's attribute alone (ranked and unranked) run in a
compiled loop; arbitrary kernels go through :func:`step_arrival` one event at
a time.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _engine
from .config import ScenarioConfig
from .model import (
    AttributeDistribution,
    DeletionKernel,
    ObservationWindow,
    RankedKernel,
    ScheduledArrivals,
    UnrankedKernel,
)


# --------------------------------------------------------------------------
# Event-level reference implementation
# --------------------------------------------------------------------------

@dataclass
class Particle:
    attribute: float
    arrival_epoch: float
    arrival_index: int
    deletion_epoch: float | None = None
    attempts: int = 0
    deleted_by: int | None = None


@dataclass
class DepartureBatch:
    trigger_index: int
    epoch: float
    departed: tuple[float, ...]


@dataclass
class SystemState:
    """Live particles ordered by attribute."""

    live: list[Particle] = field(default_factory=list)
    clock: float = 0.0
    arrivals_seen: int = 0
    initial_size: int = 0
    departed: list[Particle] = field(default_factory=list)

    def __post_init__(self):
        self.live.sort(key=lambda p: p.attribute)
        self._keys = [p.attribute for p in self.live]

    @property
    def attributes(self) -> list[float]:
        return list(self._keys)

    def __len__(self) -> int:
        return len(self.live)

    def insert(self, particle: Particle) -> None:
        i = bisect.bisect_left(self._keys, particle.attribute)
        self._keys.insert(i, particle.attribute)
        self.live.insert(i, particle)

    def conserved(self) -> bool:
        return self.initial_size + self.arrivals_seen == len(self.live) + len(self.departed)


def seed_initial_population(pattern: Sequence[float],
                            dist: AttributeDistribution | None = None) -> SystemState:
    """State at time 0 holding the given attributes (arrival index 0)."""
    attrs = [float(x) for x in pattern]
    if dist is not None and attrs and not np.all(dist.in_support(np.array(attrs))):
        raise ValueError("initial attributes must lie in E")
    return SystemState([Particle(x, 0.0, 0) for x in attrs], initial_size=len(attrs))


def step_arrival(state: SystemState, y: float, kernel: DeletionKernel,
                 rng: np.random.Generator, epoch: float | None = None
                 ) -> tuple[SystemState, DepartureBatch]:
    """Process one arrival with attribute y; mutates and returns the state.

    Every eligible live particle (strictly below y for a ranked kernel, all of
    them otherwise) records an attempt and is deleted with probability
    p(x, y). The newcomer is inserted afterwards, so it is never exposed to
    its own arrival.
    """
    epoch = state.clock if epoch is None else float(epoch)
    if epoch < state.clock:
        raise ValueError("arrival epochs must be nondecreasing")
    state.clock = epoch
    state.arrivals_seen += 1
    index = state.arrivals_seen
    hi = bisect.bisect_left(state._keys, y) if isinstance(kernel, RankedKernel) else len(state.live)
    departed = []
    if hi:
        cand = state.live[:hi]
        probs = np.asarray(kernel.prob(np.array(state._keys[:hi]), y), dtype=float)
        dead = rng.random(hi) < probs
        keep = []
        for p, d in zip(cand, dead):
            p.attempts += 1
            if d:
                p.deletion_epoch = epoch
                p.deleted_by = index
                departed.append(p)
            else:
                keep.append(p)
        state.live[:hi] = keep
        state._keys[:hi] = [p.attribute for p in keep]
        state.departed.extend(departed)
    state.insert(Particle(float(y), epoch, index))
    return state, DepartureBatch(index, epoch, tuple(p.attribute for p in departed))


# --------------------------------------------------------------------------
# Simulation records
# --------------------------------------------------------------------------

@dataclass
class Sojourns:
    attribute: np.ndarray
    duration: np.ndarray
    censored: np.ndarray

    def __len__(self) -> int:
        return self.attribute.size

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0


@dataclass
class BatchCounts:
    """Departures per arrival event: one row per trigger, one column per window."""

    trigger_index: np.ndarray
    epoch: np.ndarray
    counts: np.ndarray
    sizes: np.ndarray


@dataclass
class SimulationRecord:
    """Complete history of one run, one row per particle.

    Particles ``0 .. n_initial-1`` are the initial population; arrival
    ``k`` (1-based) is row ``n_initial + k - 1``. ``trigger`` is the row of
    the arrival that deleted a particle, -1 while it is alive.
    """

    attribute: np.ndarray
    arrival_epoch: np.ndarray
    arrival_index: np.ndarray
    deletion_epoch: np.ndarray
    trigger: np.ndarray
    attempts: np.ndarray
    n_initial: int
    horizon: float
    windows: tuple[ObservationWindow, ...]
    sample_epochs: tuple[float, ...]
    counts: np.ndarray
    config_digest: str = ""
    replication: int = 0

    @property
    def n_arrivals(self) -> int:
        return self.attribute.size - self.n_initial

    @property
    def count_samples(self) -> list[tuple[float, tuple[int, ...]]]:
        return [(t, tuple(int(c) for c in row)) for t, row in zip(self.sample_epochs, self.counts)]

    def alive_at(self, t: float) -> np.ndarray:
        return (self.arrival_epoch <= t) & ~(self.deletion_epoch <= t)

    @property
    def sojourns(self) -> list[tuple[float, float, float | None]]:
        """(attribute, arrival epoch, deletion epoch or None when censored) for arrivals."""
        rows = slice(self.n_initial, None)
        return [(float(x), float(a), None if math.isnan(d) else float(d))
                for x, a, d in zip(self.attribute[rows], self.arrival_epoch[rows],
                                   self.deletion_epoch[rows])]

    @property
    def batches(self) -> list[DepartureBatch]:
        order = np.argsort(self.trigger, kind="stable")
        trig = self.trigger[order]
        out = []
        for row in range(self.n_initial, self.attribute.size):
            lo, hi = np.searchsorted(trig, row), np.searchsorted(trig, row, side="right")
            out.append(DepartureBatch(int(self.arrival_index[row]), float(self.arrival_epoch[row]),
                                      tuple(float(x) for x in self.attribute[order[lo:hi]])))
        return out

    def check_conservation(self) -> bool:
        """initial + arrivals == live + departed after every event."""
        n_init = self.n_initial
        departed_by = np.zeros(self.n_arrivals + 1, dtype=np.int64)
        dead = self.trigger >= 0
        np.add.at(departed_by, self.trigger[dead] - n_init + 1, 1)
        cum_departed = np.cumsum(departed_by)
        k = np.arange(self.n_arrivals + 1)
        live = n_init + k - cum_departed
        final_live = int(np.count_nonzero(~dead))
        rows = np.arange(self.attribute.size)
        # only later arrivals can delete a particle
        causal = np.all(self.trigger[dead] > rows[dead]) and np.all(self.trigger[dead] >= n_init)
        # the newcomer always survives its own arrival
        return bool(causal and np.all(live[1:] >= 1) and live[0] == n_init
                    and live[-1] == final_live)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.attribute, self.arrival_epoch, self.deletion_epoch, self.trigger,
                    self.counts):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def iter_jsonl(self) -> Iterator[str]:
        """One JSON object per line: a header, every arrival event, then the count samples."""
        yield json.dumps({"type": "header", "config_digest": self.config_digest,
                          "replication": self.replication, "horizon": self.horizon,
                          "n_initial": self.n_initial,
                          "initial": [float(x) for x in self.attribute[:self.n_initial]],
                          "windows": [str(w) for w in self.windows]})
        for b in self.batches:
            row = self.n_initial + b.trigger_index - 1
            yield json.dumps({"type": "arrival", "index": b.trigger_index, "epoch": b.epoch,
                              "attribute": float(self.attribute[row]),
                              "departed": list(b.departed)})
        for t, counts in self.count_samples:
            yield json.dumps({"type": "sample", "epoch": t, "counts": list(counts)})

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.iter_jsonl():
                fh.write(line + "\n")

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "window", "count"])
        for t, row in zip(self.sample_epochs, self.counts):
            for win, c in zip(self.windows, row):
                w.writerow([repr(float(t)), str(win), int(c)])
        return buf.getvalue()


def _counts_at(attribute, alive_fn, windows, epochs) -> np.ndarray:
    out = np.zeros((len(epochs), len(windows)), dtype=np.int64)
    for i, t in enumerate(epochs):
        x = attribute[alive_fn(t)]
        for j, w in enumerate(windows):
            out[i, j] = w.count(x)
    return out


# --------------------------------------------------------------------------
# Running scenarios
# --------------------------------------------------------------------------

def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent stream for (master seed, replication index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


def run_simulation(config: ScenarioConfig, replication: int = 0, *,
                   mode: str | None = None) -> SimulationRecord:
    """Simulate one replication of the scenario up to its horizon.

    Deterministic in (config, replication). ``mode`` overrides the config's
    deletion mode: ``"bernoulli"`` draws a trial per eligible particle at
    every arrival, ``"geometric"`` pre-draws lifetimes (ranked kernels only).
    """
    mode = mode or config.deletion_mode
    rng = replication_rng(config.seed, replication)
    dist, kernel = config.distribution, config.kernel

    initial = config.initial.draw(rng)
    epochs = config.arrivals.epochs(rng, config.horizon, config.max_arrivals)
    n_arr = epochs.size
    if isinstance(config.arrivals, ScheduledArrivals) and config.arrivals.attributes is not None:
        arr_attrs = np.asarray(config.arrivals.attributes[:n_arr], dtype=float)
    else:
        arr_attrs = np.asarray(dist.sample(rng, n_arr), dtype=float)

    attribute = np.concatenate([initial, arr_attrs])
    arrival_epoch = np.concatenate([np.zeros(initial.size), epochs])
    arrival_index = np.concatenate([np.zeros(initial.size, dtype=np.int64),
                                    np.arange(1, n_arr + 1, dtype=np.int64)])
    n_init = initial.size

    if mode == "geometric" and not isinstance(kernel, RankedKernel):
        raise ValueError("geometric lifetimes are only valid for ranked kernels")
    if isinstance(kernel, (RankedKernel, UnrankedKernel)):
        a_vals = np.asarray(kernel.a(attribute), dtype=float).reshape(attribute.shape)
        if mode == "geometric":
            lifetimes = rng.geometric(a_vals) if attribute.size else np.zeros(0, dtype=np.int64)
        else:
            lifetimes = np.zeros(attribute.size, dtype=np.int64)
        engine_seed = int(rng.integers(0, 2**32 - 1))
        trigger, attempts = _engine.run_deletions(
            attribute, a_vals, n_init, isinstance(kernel, RankedKernel), mode == "geometric",
            lifetimes.astype(np.int64), engine_seed)
    else:
        trigger, attempts = _run_general(attribute, arrival_epoch, n_init, kernel, rng)

    deletion_epoch = np.full(attribute.size, np.nan)
    dead = trigger >= 0
    deletion_epoch[dead] = arrival_epoch[trigger[dead]]

    def alive(t):
        return (arrival_epoch <= t) & ~(deletion_epoch <= t)

    sample_epochs = tuple(config.epochs)
    counts = _counts_at(attribute, alive, config.windows, sample_epochs)
    return SimulationRecord(attribute, arrival_epoch, arrival_index, deletion_epoch, trigger,
                            attempts, n_init, config.horizon, tuple(config.windows),
                            sample_epochs, counts, config.digest, replication)


def _run_general(attribute, arrival_epoch, n_init, kernel, rng):
    initial = [Particle(float(x), 0.0, 0) for x in attribute[:n_init]]
    row_of = {id(p): i for i, p in enumerate(initial)}
    state = SystemState(list(initial), initial_size=n_init)
    for k in range(n_init, attribute.size):
        step_arrival(state, float(attribute[k]), kernel, rng, float(arrival_epoch[k]))
    trigger = np.full(attribute.size, -1, dtype=np.int64)
    attempts = np.zeros(attribute.size, dtype=np.int64)
    for p in state.live + state.departed:
        row = row_of[id(p)] if p.arrival_index == 0 else n_init + p.arrival_index - 1
        attempts[row] = p.attempts
        if p.deleted_by is not None:
            trigger[row] = n_init + p.deleted_by - 1
    return trigger, attempts


# --------------------------------------------------------------------------
# Extraction
# --------------------------------------------------------------------------

def extract_counts(record: SimulationRecord, windows: Sequence[ObservationWindow],
                   epochs: Sequence[float]) -> np.ndarray:
    """Matrix of N_t(B): rows are epochs, columns windows."""
    for t in epochs:
        if not 0 <= t <= record.horizon:
            raise ValueError(f"epoch {t} is outside the recorded span [0, {record.horizon}]")
    return _counts_at(record.attribute, record.alive_at, windows, epochs)


def extract_sojourns(record: SimulationRecord, window: ObservationWindow, burn_in: float,
                     horizon_margin: float) -> Sojourns:
    """Sojourns of arrivals into the window during [burn_in, horizon - margin]."""
    if not burn_in + horizon_margin < record.horizon:
        raise ValueError("burn_in + horizon_margin must be below the horizon")
    rows = np.arange(record.n_initial, record.attribute.size)
    t = record.arrival_epoch[rows]
    x = record.attribute[rows]
    sel = (t >= burn_in) & (t <= record.horizon - horizon_margin) & window.contains(x)
    rows = rows[sel]
    d = record.deletion_epoch[rows]
    censored = np.isnan(d)
    duration = np.where(censored, np.nan, d - record.arrival_epoch[rows])
    return Sojourns(record.attribute[rows], duration, censored)


def extract_departure_batches(record: SimulationRecord, burn_in: float,
                              windows: Sequence[ObservationWindow]) -> BatchCounts:
    """Per-arrival departure counts for every arrival after burn_in, empty batches included."""
    if not burn_in < record.horizon:
        raise ValueError("burn_in must be below the horizon")
    rows = np.arange(record.n_initial, record.attribute.size)
    rows = rows[record.arrival_epoch[rows] > burn_in]
    counts = np.zeros((rows.size, len(windows)), dtype=np.int64)
    sizes = np.zeros(rows.size, dtype=np.int64)
    if rows.size:
        first = rows[0]
        dead = record.trigger >= first
        pos = record.trigger[dead] - first
        np.add.at(sizes, pos, 1)
        xs = record.attribute[dead]
        for j, w in enumerate(windows):
            inside = w.contains(xs)
            np.add.at(counts[:, j], pos[inside], 1)
    return BatchCounts(record.arrival_index[rows], record.arrival_epoch[rows], counts, sizes)


# --------------------------------------------------------------------------
# Replications
# --------------------------------------------------------------------------

def run_replications(config: ScenarioConfig, reduce: Callable[[SimulationRecord], object],
                     *, replications: int | None = None, jobs: int = 1,
                     mode: str | None = None, start: int = 0) -> list:
    """reduce(run_simulation(config, r)) for each replication, in index order.

    Each replication owns its stream, so results do not depend on ``jobs``.
    """
    n = config.replications if replications is None else replications
    idx = range(start, start + n)
    if jobs == 1:
        return [reduce(run_simulation(config, r, mode=mode)) for r in idx]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(_one)(config, r, mode, reduce) for r in idx)


def _one(config, r, mode, reduce):
    return reduce(run_simulation(config, r, mode=mode))


def final_counts(record: SimulationRecord) -> np.ndarray:
    """Window counts at the last sampling epoch."""
    return record.counts[-1]
