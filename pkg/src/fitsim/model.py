"""Process semantics: parameters, per-step transitions, and the run loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from fitsim import _treap
from fitsim.rng import (
    COLLISION_STREAM,
    INITIAL_STREAM,
    MAIN_STREAM,
    WORDS_PER_STEP,
    VariateStream,
    probability_threshold,
    words_to_unit,
)
from fitsim.site_index import DuplicateFitnessError, NaiveSiteIndex, SiteIndex

VARIANTS = ("proportional", "uniform_senate")
EVENT_KINDS = ("mutation", "inheritance", "death", "idle")

POSITIVE_RECURRENT = "positive_recurrent"
NULL_RECURRENT = "null_recurrent"
TRANSIENT = "transient"

CHUNK_STEPS = 1 << 16


@dataclass(frozen=True)
class Params:
    p: float
    r: float
    variant: str = "proportional"
    seed: int = 0
    t0: int = 0

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"birth probability p must be in (0, 1), got {self.p}")
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"mutation probability r must be in (0, 1), got {self.r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.t0 < 0:
            raise ValueError("t0 must be nonnegative")

    @property
    def constants(self) -> "DerivedConstants":
        return derive_constants(self.p, self.r)


@dataclass(frozen=True)
class DerivedConstants:
    p: float
    r: float
    gamma: float
    f_c: float
    c: float
    regime: str

    @property
    def transient(self) -> bool:
        return self.regime == TRANSIENT


def derive_constants(p: float, r: float) -> DerivedConstants:
    """Drift, critical fitness, tail exponent and recurrence class for (p, r).

    ``r = 1`` is accepted here (all births mutate) even though a simulation
    needs ``r < 1``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if not 0.0 < r <= 1.0:
        raise ValueError(f"r must be in (0, 1], got {r}")
    gamma = p - (1.0 - p)
    f_c = (1.0 - p) / (p * r)
    c = gamma / (p * (1.0 - r)) if r < 1.0 else math.inf
    birth, death = p * r, 1.0 - p
    if math.isclose(birth, death, rel_tol=1e-12, abs_tol=1e-15):
        regime = NULL_RECURRENT
    elif birth > death:
        regime = TRANSIENT
    else:
        regime = POSITIVE_RECURRENT
    return DerivedConstants(p=p, r=r, gamma=gamma, f_c=f_c, c=c, regime=regime)


@dataclass(frozen=True)
class StepVariates:
    x: bool
    rr: bool
    v: float


def variates_from_words(words: np.ndarray, params: Params) -> list[StepVariates]:
    words = np.asarray(words, dtype=np.uint64).reshape(-1, WORDS_PER_STEP)
    xs = words[:, 0] < probability_threshold(params.p)
    rs = words[:, 1] < probability_threshold(params.r)
    vs = words_to_unit(words[:, 2])
    return [StepVariates(bool(x), bool(rr), float(v)) for x, rr, v in zip(xs, rs, vs)]


@dataclass(frozen=True)
class EventRecord:
    n: int
    kind: str
    fitness: float | None
    population: int

    def csv_row(self) -> str:
        fit = "" if self.fitness is None else repr(self.fitness)
        return f"{self.n},{self.kind},{fit},{self.population}"


@dataclass
class ModelState:
    params: Params
    index: SiteIndex | NaiveSiteIndex
    n: int = 0
    collisions: VariateStream = field(default=None)

    def __post_init__(self):
        if self.collisions is None:
            self.collisions = VariateStream(self.params.seed, COLLISION_STREAM)

    @classmethod
    def initial(cls, params: Params, naive: bool = False) -> "ModelState":
        """Empty state, or ``t0`` singleton sites at independent uniform fitness."""
        index = NaiveSiteIndex() if naive else SiteIndex()
        if params.t0:
            init = VariateStream(params.seed, INITIAL_STREAM)
            placed = 0
            while placed < params.t0:
                try:
                    index.insert_site(init.uniform())
                    placed += 1
                except DuplicateFitnessError:
                    continue
        return cls(params=params, index=index)

    @property
    def population(self) -> int:
        return self.index.total_population

    def view(self) -> "StateView":
        keys, sizes = self.index.to_arrays()
        keys.flags.writeable = False
        sizes.flags.writeable = False
        return StateView(
            params=self.params,
            n=self.n,
            population=int(sizes.sum()),
            collision_position=self.collisions.position,
            fitness=keys,
            sizes=sizes,
        )


@dataclass(frozen=True)
class StateView:
    """Read-only copy of a state handed to observers and writers."""

    params: Params
    n: int
    population: int
    collision_position: int
    fitness: np.ndarray
    sizes: np.ndarray

    def sites(self) -> list[tuple[float, int]]:
        return list(zip(self.fitness.tolist(), self.sizes.tolist()))


def _insert_new_site(state: ModelState, fitness: float) -> float:
    while True:
        try:
            return state.index.insert_site(fitness)
        except DuplicateFitnessError:
            fitness = state.collisions.uniform()


def step(state: ModelState, variates: StepVariates) -> EventRecord:
    """One transition of the size-proportional model."""
    index = state.index
    pop = index.total_population
    if variates.x:
        if variates.rr or pop == 0:
            kind, fitness = "mutation", _insert_new_site(state, variates.v)
        else:
            fitness = index.sample_individual(variates.v)
            index.increment_site(fitness)
            kind = "inheritance"
        pop += 1
    elif pop > 0:
        kind, fitness = "death", index.remove_lowest_fitness_member()
        pop -= 1
    else:
        kind, fitness = "idle", None
    state.n += 1
    return EventRecord(state.n, kind, fitness, pop)


def step_uniform_variant(state: ModelState, variates: StepVariates) -> EventRecord:
    """One transition with uniform inheritance and whole-site death."""
    index = state.index
    pop = index.total_population
    if variates.x:
        if variates.rr or pop == 0:
            kind, fitness = "mutation", _insert_new_site(state, variates.v)
        else:
            fitness = index.sample_site(variates.v)
            index.increment_site(fitness)
            kind = "inheritance"
        pop += 1
    elif pop > 0:
        assert index.total_sites > 0
        fitness, size = index.remove_lowest_fitness_site()
        kind = "death"
        pop -= size
    else:
        kind, fitness = "idle", None
    state.n += 1
    return EventRecord(state.n, kind, fitness, pop)


def advance(state: ModelState, variates: StepVariates) -> EventRecord:
    if state.params.variant == "proportional":
        return step(state, variates)
    return step_uniform_variant(state, variates)


@dataclass(frozen=True)
class EventBatch:
    """Events for steps ``first_n .. first_n + len - 1`` as parallel arrays."""

    first_n: int
    kinds: np.ndarray
    fitness: np.ndarray
    population: np.ndarray

    def __len__(self) -> int:
        return int(self.kinds.shape[0])

    def records(self) -> Iterable[EventRecord]:
        for j in range(len(self)):
            fit = float(self.fitness[j])
            yield EventRecord(
                self.first_n + j,
                EVENT_KINDS[int(self.kinds[j])],
                None if math.isnan(fit) else fit,
                int(self.population[j]),
            )


class Observer:
    """Run hook. ``every`` sets the snapshot cadence; ``wants_events``
    requests per-step event batches."""

    every: int | None = None
    wants_events: bool = False

    def on_events(self, batch: EventBatch) -> None:
        pass

    def on_snapshot(self, view: StateView) -> None:
        pass


class EventCollector(Observer):
    wants_events = True

    def __init__(self):
        self.batches: list[EventBatch] = []

    def on_events(self, batch: EventBatch) -> None:
        self.batches.append(batch)

    def records(self) -> list[EventRecord]:
        return [rec for b in self.batches for rec in b.records()]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.batches:
            return np.zeros(0, np.int8), np.zeros(0), np.zeros(0, np.int64)
        return (
            np.concatenate([b.kinds for b in self.batches]),
            np.concatenate([b.fitness for b in self.batches]),
            np.concatenate([b.population for b in self.batches]),
        )


class ObserverError(RuntimeError):
    pass


def _notify(observer: Observer, method: str, arg, n: int) -> None:
    try:
        getattr(observer, method)(arg)
    except Exception as exc:
        raise ObserverError(f"observer {observer!r} failed in {method} at step {n}: {exc}") from exc


_KIND_CODE = {k: i for i, k in enumerate(EVENT_KINDS)}


def _python_chunk(state: ModelState, words: np.ndarray, logs) -> None:
    for j, var in enumerate(variates_from_words(words, state.params)):
        rec = advance(state, var)
        if logs is not None:
            logs[0][j] = _KIND_CODE[rec.kind]
            logs[1][j] = math.nan if rec.fitness is None else rec.fitness
            logs[2][j] = rec.population


def _kernel_chunk(state: ModelState, words: np.ndarray, logs) -> None:
    params = state.params
    index: SiteIndex = state.index
    m = words.shape[0] // WORDS_PER_STEP
    index.reserve(m)
    thr_p = probability_threshold(params.p)
    thr_r = probability_threshold(params.r)
    variant = _treap.PROPORTIONAL if params.variant == "proportional" else _treap.UNIFORM_SENATE
    if logs is None:
        kinds, fits, pops = np.zeros(0, np.int8), np.zeros(0), np.zeros(0, np.int64)
    else:
        kinds, fits, pops = logs
    start = 0
    base = state.n
    while start < m:
        stopped = _treap.run_steps(*index.arrays, words, start, m, thr_p, thr_r, variant,
                                   kinds, fits, pops)
        if stopped == m:
            break
        # fitness collision at step `stopped`: redo it on the Python path
        state.n = base + stopped
        var = variates_from_words(words[WORDS_PER_STEP * stopped:WORDS_PER_STEP * (stopped + 1)],
                                  params)[0]
        rec = advance(state, var)
        if logs is not None:
            kinds[stopped] = _KIND_CODE[rec.kind]
            fits[stopped] = rec.fitness
            pops[stopped] = rec.population
        start = stopped + 1
    state.n = base + m


def run(params: Params, n_steps: int, observers: Sequence[Observer] = (), *,
        state: ModelState | None = None, naive: bool = False) -> ModelState:
    """Advance ``n_steps`` steps from ``state`` (or a fresh initial state).

    Step ``n`` consumes main-stream words ``3(n-1) .. 3(n-1)+2``, so runs
    are reproducible from the seed and resumable from ``state.n``. The
    treap index runs through the compiled kernel; the naive index steps in
    Python. Both follow identical semantics.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if state is None:
        state = ModelState.initial(params, naive=naive)
    elif state.params != params:
        raise ValueError("state was produced under different parameters")
    main = VariateStream(params.seed, MAIN_STREAM, WORDS_PER_STEP * state.n)
    chunk_fn = _kernel_chunk if isinstance(state.index, SiteIndex) else _python_chunk
    want_events = any(o.wants_events for o in observers)
    cadences = [o for o in observers if o.every]
    for o in cadences:
        if o.every < 1:
            raise ValueError("observer cadence must be >= 1")

    end = state.n + n_steps
    while state.n < end:
        m = min(CHUNK_STEPS, end - state.n)
        for o in cadences:
            m = min(m, o.every - state.n % o.every)
        words = main.words(WORDS_PER_STEP * m)
        first = state.n + 1
        logs = None
        if want_events:
            logs = (np.empty(m, np.int8), np.empty(m, np.float64), np.empty(m, np.int64))
        chunk_fn(state, words, logs)
        if logs is not None:
            for arr in logs:
                arr.flags.writeable = False
            batch = EventBatch(first, *logs)
            for o in observers:
                if o.wants_events:
                    _notify(o, "on_events", batch, state.n)
        due = [o for o in cadences if state.n % o.every == 0]
        if due:
            view = state.view()
            for o in due:
                _notify(o, "on_snapshot", view, state.n)
    return state
