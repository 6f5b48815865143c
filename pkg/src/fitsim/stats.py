"""Empirical measures, comparisons against the limit laws, and diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from fitsim.model import DerivedConstants, Observer, StateView

NORMALIZATION_TOL = 1e-9


# -- empirical measures -------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Fraction of the population in size-k sites with fitness >= f."""

    f: float
    population: int
    pmf: Mapping[int, float]
    histogram: Mapping[int, int]

    @property
    def mass(self) -> float:
        return math.fsum(self.pmf.values())

    def __getitem__(self, k: int) -> float:
        return self.pmf.get(k, 0.0)

    def renormalized(self) -> dict[int, float]:
        """The measure rescaled to a probability vector over k >= 1."""
        m = math.fsum(v for k, v in self.pmf.items() if k >= 1)
        if m == 0:
            raise ValueError("no mass at positive sizes")
        return {k: v / m for k, v in self.pmf.items() if k >= 1}


def empirical_measure(histogram: Mapping[int, int], population: int, f: float) -> EmpiricalMeasure:
    members = sum(k * u for k, u in histogram.items())
    if any(k < 1 or u < 0 for k, u in histogram.items()):
        raise ValueError("histogram must map positive sizes to nonnegative counts")
    if members > population:
        raise ValueError(f"histogram holds {members} members but the population is {population}")
    if population == 0:
        return EmpiricalMeasure(f, 0, {0: 1.0}, {})
    pmf = {k: k * u / population for k, u in sorted(histogram.items()) if u}
    return EmpiricalMeasure(f, population, pmf, {k: u for k, u in histogram.items() if u})


def site_histogram(fitness: np.ndarray, sizes: np.ndarray, f: float = 0.0) -> dict[int, int]:
    counts = np.bincount(sizes[fitness >= f])
    return {int(k): int(counts[k]) for k in np.flatnonzero(counts)}


def measure_from_view(view: StateView, f: float) -> EmpiricalMeasure:
    return empirical_measure(site_histogram(view.fitness, view.sizes, f), view.population, f)


def joint_band_mass(measure_a: EmpiricalMeasure, measure_b: EmpiricalMeasure,
                    sizes: Iterable[int] | None = None) -> float:
    """Population fraction with fitness in [a, b) and site size in ``sizes``
    (all positive sizes when ``None``)."""
    if measure_a.f > measure_b.f:
        raise ValueError(f"need a <= b, got a={measure_a.f}, b={measure_b.f}")
    if measure_a.population != measure_b.population:
        raise ValueError("measures come from different snapshots")
    ks = set(measure_a.pmf) | set(measure_b.pmf) if sizes is None else set(sizes)
    ks.discard(0)
    return math.fsum(measure_a[k] - measure_b[k] for k in ks)


def size_pmf_from_counts(counts: Mapping[int, float] | np.ndarray) -> np.ndarray:
    """Dense vector ``out[k-1]`` from a sparse mapping or a dense k=1.. array."""
    if isinstance(counts, Mapping):
        if not counts:
            return np.zeros(0)
        K = max(counts)
        out = np.zeros(K)
        for k, v in counts.items():
            if k < 1:
                raise ValueError("sizes must be positive")
            out[k - 1] = v
        return out
    return np.asarray(counts, dtype=np.float64)


# -- comparisons --------------------------------------------------------------


def tv_distance(p_emp, q_theory) -> float:
    """Total variation between an empirical PMF and a (possibly truncated)
    theoretical PMF over k >= 1; theory mass beyond the supplied range counts
    fully."""
    p = size_pmf_from_counts(p_emp)
    q = size_pmf_from_counts(q_theory)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("PMFs must be nonnegative")
    if abs(math.fsum(p.tolist()) - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"empirical PMF sums to {p.sum()}, expected 1")
    q_mass = math.fsum(q.tolist())
    if q_mass > 1.0 + NORMALIZATION_TOL:
        raise ValueError(f"theoretical PMF sums to {q_mass} > 1")
    K = max(p.size, q.size)
    p = np.pad(p, (0, K - p.size))
    q = np.pad(q, (0, K - q.size))
    missing = max(0.0, 1.0 - q_mass)
    return 0.5 * (math.fsum(np.abs(p - q).tolist()) + missing)


def percent_error(emp, theory, k: int) -> float:
    e = size_pmf_from_counts(emp)
    t = size_pmf_from_counts(theory)
    tk = t[k - 1] if k <= t.size else 0.0
    if tk <= 0:
        raise ValueError(f"theoretical probability at k={k} is zero")
    ek = e[k - 1] if k <= e.size else 0.0
    return float(abs(ek - tk) / tk * 100.0)


def ks_uniform_fitness(fitness: np.ndarray, sizes: np.ndarray | None,
                       constants: DerivedConstants, weighted: bool = True) -> float:
    """Kolmogorov-Smirnov distance between the fitness of individuals (or of
    sites when ``weighted`` is false) at or above f_c and U[f_c, 1]."""
    if not constants.transient:
        raise ValueError("fitness marginal is only defined in the transient regime")
    fitness = np.asarray(fitness, dtype=np.float64)
    if sizes is None or not weighted:
        w = np.ones(fitness.shape, dtype=np.float64)
    else:
        w = np.asarray(sizes, dtype=np.float64)
    keep = fitness >= constants.f_c
    x, w = fitness[keep], w[keep]
    if x.size == 0:
        raise ValueError("no sample points at or above f_c")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    # tied values act as a single atom
    ux, first = np.unique(x, return_index=True)
    wu = np.add.reduceat(w, first)
    cdf_hi = np.cumsum(wu) / wu.sum()
    cdf_lo = cdf_hi - wu / wu.sum()
    model = np.clip((ux - constants.f_c) / (1.0 - constants.f_c), 0.0, 1.0)
    return float(max(np.max(cdf_hi - model), np.max(model - cdf_lo)))


# -- tails --------------------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    exponent: float
    intercept: float
    r_squared: float
    n_points: int
    k_min: float
    k_max: float


def tail_exponent_fit(pmf, k_min: float = 10, k_max: float | None = None,
                      min_points: int = 10) -> TailFit:
    """Least-squares slope of log pmf against log k over k_min <= k <= k_max,
    reported as a positive exponent.

    ``pmf`` is a dense array indexed from k = 1, or a mapping from (possibly
    non-integer, e.g. bin-centre) abscissae to values. Zero entries are
    skipped.
    """
    if isinstance(pmf, Mapping):
        ks = np.array(sorted(pmf), dtype=np.float64)
        vals = np.array([pmf[k] for k in sorted(pmf)], dtype=np.float64)
    else:
        vals = np.asarray(pmf, dtype=np.float64)
        ks = np.arange(1, vals.size + 1, dtype=np.float64)
    sel = (ks >= k_min) & (vals > 0)
    if k_max is not None:
        sel &= ks <= k_max
    if sel.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive points at k >= {k_min}, got {int(sel.sum())}")
    lx, ly = np.log(ks[sel]), np.log(vals[sel])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return TailFit(float(-slope), float(intercept), r2, int(sel.sum()), float(ks[sel][0]), float(ks[sel][-1]))


def log_binned(weights_by_k: Mapping[int, float], counts_by_k: Mapping[int, int] | None = None,
               bins_per_decade: int = 8, min_count: int = 10) -> dict[float, float]:
    """Average PMF value per logarithmic size bin, keyed by the bin's
    geometric centre.

    Bins are cut at the first bin holding fewer than ``min_count`` sites
    (``counts_by_k`` defaults to ``weights_by_k``), where Poisson noise would
    dominate the estimate.
    """
    if not weights_by_k:
        return {}
    counts_by_k = weights_by_k if counts_by_k is None else counts_by_k
    K = max(weights_by_k)
    n_edges = int(math.ceil(math.log10(K + 1) * bins_per_decade)) + 2
    edges = np.unique(np.floor(np.logspace(0, math.log10(K + 1), n_edges) + 1e-9).astype(np.int64))
    edges = np.append(edges[edges <= K], K + 1)
    w = size_pmf_from_counts(weights_by_k)
    c = size_pmf_from_counts(counts_by_k)
    c = np.pad(c, (0, max(0, K - c.size)))
    out = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        if c[lo - 1:hi - 1].sum() < min_count:
            break
        centre = math.sqrt(lo * (hi - 1))
        out[centre] = float(w[lo - 1:hi - 1].sum() / (hi - lo))
    return out


# -- mean-reversion bands -----------------------------------------------------


@dataclass(frozen=True)
class BandDiagnostics:
    epsilon: float
    beta_target: float
    band_entries: tuple[int, ...]
    up_exits: tuple[int, ...]
    down_exits: tuple[int, ...]
    late_fraction: float
    late_start: int
    n_points: int

    @property
    def late_up_exits(self) -> int:
        return sum(1 for t in self.up_exits if t >= self.late_start)


def band_diagnostics(trajectory: Sequence[float], beta_target: float, epsilon: float,
                     times: Sequence[int] | None = None, late_fraction_from: float = 0.5) -> BandDiagnostics:
    """Replay the band-entry / exit stopping times on a recorded ratio path.

    An entry is the first time the ratio minus the target lies in
    (2 eps, 3 eps); after an entry the next exit is the first time the ratio
    exceeds target + 4 eps (up) or drops below target + eps (down). The next
    entry is sought strictly after that exit.
    """
    ratios = np.asarray(trajectory, dtype=np.float64)
    if ratios.size == 0:
        raise ValueError("empty trajectory")
    times = np.arange(ratios.size) if times is None else np.asarray(times)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    b, e = beta_target, epsilon
    entries, ups, downs = [], [], []
    in_band = False
    for t, x in zip(times.tolist(), ratios.tolist()):
        if not in_band:
            if 2 * e < x - b < 3 * e:
                entries.append(t)
                in_band = True
        elif x > b + 4 * e:
            ups.append(t)
            in_band = False
        elif x < b + e:
            downs.append(t)
            in_band = False
    cut = int(math.floor(late_fraction_from * ratios.size))
    late = ratios[cut:]
    frac = float(np.mean(np.abs(late - b) <= e)) if late.size else float("nan")
    late_start = int(times[cut]) if cut < times.size else int(times[-1]) + 1
    return BandDiagnostics(e, b, tuple(entries), tuple(ups), tuple(downs), frac, late_start, int(ratios.size))


class RatioRecorder(Observer):
    """Records k U_n^k(f) / T_n every ``every`` steps."""

    def __init__(self, k: int, f: float, every: int):
        self.k, self.f, self.every = k, f, every
        self.times: list[int] = []
        self.ratios: list[float] = []

    def on_snapshot(self, view: StateView) -> None:
        if view.population == 0:
            return
        sel = (view.fitness >= self.f) & (view.sizes == self.k)
        self.times.append(view.n)
        self.ratios.append(self.k * int(sel.sum()) / view.population)


# -- population chain: exact law and coupling --------------------------------

MAX_DP_STEPS = 10_000


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")


def population_pmf_path(p: float, n_max: int, record: Iterable[int]) -> dict[int, np.ndarray]:
    """Exact PMFs of T_n (reflected at 0 with holding, T_0 = 0) at the
    requested n."""
    _check_p(p)
    if n_max > MAX_DP_STEPS:
        raise ValueError(f"n = {n_max} exceeds the exact-DP limit {MAX_DP_STEPS}")
    want = set(record)
    pmf = np.zeros(n_max + 1)
    pmf[0] = 1.0
    out = {0: pmf[:1].copy()} if 0 in want else {}
    q = 1.0 - p
    for n in range(1, n_max + 1):
        nxt = np.zeros_like(pmf)
        nxt[1:n + 1] = p * pmf[:n]
        nxt[:n - 1] += q * pmf[1:n]
        nxt[0] += q * pmf[0]
        pmf = nxt
        if n in want:
            out[n] = pmf[:n + 1].copy()
    return out


def exact_population_pmf(p: float, n: int) -> np.ndarray:
    """``out[t] = P(T_n = t)`` for t = 0..n."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return population_pmf_path(p, n, [n])[n]


def exceedance_probability(pmf: np.ndarray, n: int, gamma: float, epsilon: float) -> float:
    """P(|T_n / n - gamma| > epsilon) from an exact PMF (ties count as inside)."""
    t = np.arange(pmf.size)
    outside = np.abs(t / n - gamma) > epsilon + 1e-12
    return math.fsum(pmf[outside].tolist())


@dataclass(frozen=True)
class CouplingReport:
    p: float
    n: int
    trials: int
    exact_pmf: np.ndarray
    reflected_walk_pmf: np.ndarray
    chain_pmf: np.ndarray
    tv_walk_exact: float
    tv_chain_exact: float
    tv_walk_chain: float
    pathwise_identical: bool
    epsilon: float
    curve_n: np.ndarray
    curve_exceed: np.ndarray
    log_slope: float

    def curve_csv(self) -> str:
        lines = ["n,P_exceed"]
        lines += [f"{n},{pe!r}" for n, pe in zip(self.curve_n.tolist(), self.curve_exceed.tolist())]
        return "\n".join(lines) + "\n"

    def tv_csv(self) -> str:
        return ("pair,tv\n"
                f"reflected_walk-exact,{self.tv_walk_exact!r}\n"
                f"chain-exact,{self.tv_chain_exact!r}\n"
                f"reflected_walk-chain,{self.tv_walk_chain!r}\n")


def _pmf_tv(a: np.ndarray, b: np.ndarray) -> float:
    K = max(a.size, b.size)
    return 0.5 * float(np.abs(np.pad(a, (0, K - a.size)) - np.pad(b, (0, K - b.size))).sum())


def _simulate_walk_and_chain(p: float, n: int, trials: int, seed: int, batch: int = 1 << 18):
    """Monte Carlo T_n two ways from the same increments: the free walk minus
    its running minimum (floored at 0), and the reflected chain itself."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xC0]))
    walk = np.zeros(n + 1, dtype=np.int64)
    chain = np.zeros(n + 1, dtype=np.int64)
    identical = True
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        steps = np.where(rng.random((m, n)) < p, 1, -1).astype(np.int64)
        w = np.cumsum(steps, axis=1)
        running_min = np.minimum(np.min(w, axis=1), 0)
        reflected = w[:, -1] - running_min
        t = np.zeros(m, dtype=np.int64)
        for j in range(n):
            t = np.maximum(t + steps[:, j], 0)
        identical &= bool(np.array_equal(t, reflected))
        walk += np.bincount(reflected, minlength=n + 1)
        chain += np.bincount(t, minlength=n + 1)
        done += m
    return walk / trials, chain / trials, identical


def coupling_check(p: float, n: int, trials: int, *, seed: int = 0, epsilon: float = 0.1,
                   curve_n: Sequence[int] = tuple(range(100, 1001, 100))) -> CouplingReport:
    _check_p(p)
    if n < 1 or trials < 1:
        raise ValueError("need n >= 1 and trials >= 1")
    if n > MAX_DP_STEPS or max(curve_n) > MAX_DP_STEPS:
        raise ValueError(f"exact DP is limited to n <= {MAX_DP_STEPS}")
    gamma = 2 * p - 1
    exact = exact_population_pmf(p, n)
    walk, chain, identical = _simulate_walk_and_chain(p, n, trials, seed)
    path = population_pmf_path(p, max(curve_n), curve_n)
    ns = np.array(sorted(curve_n))
    exceed = np.array([exceedance_probability(path[m], m, gamma, epsilon) for m in ns])
    positive = exceed > 0
    slope = float(np.polyfit(ns[positive], np.log(exceed[positive]), 1)[0]) if positive.sum() >= 2 else float("nan")
    return CouplingReport(
        p=p, n=n, trials=trials, exact_pmf=exact, reflected_walk_pmf=walk, chain_pmf=chain,
        tv_walk_exact=_pmf_tv(walk, exact), tv_chain_exact=_pmf_tv(chain, exact),
        tv_walk_chain=_pmf_tv(walk, chain), pathwise_identical=identical,
        epsilon=epsilon, curve_n=ns, curve_exceed=exceed, log_slope=slope,
    )


# -- figure data --------------------------------------------------------------


def fitness_profile(fitness: np.ndarray, sizes: np.ndarray, bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Member counts per fitness bin on [0, 1]; returns (bin left edges, counts)."""
    counts, edges = np.histogram(fitness, bins=bins, range=(0.0, 1.0), weights=sizes)
    return edges[:-1], counts.astype(np.int64)


@dataclass(frozen=True)
class DropOff:
    mass_fraction_below: float
    max_size_below: int
    sites_below: int


def drop_off(fitness: np.ndarray, sizes: np.ndarray, f_c: float) -> DropOff:
    below = fitness < f_c
    total = int(sizes.sum())
    mass = int(sizes[below].sum())
    return DropOff(mass / total if total else 0.0, int(sizes[below].max(initial=0)), int(below.sum()))


# -- ensembles ----------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    run_id: str
    population: int
    histogram: Mapping[int, int]

    def measure(self) -> EmpiricalMeasure:
        return empirical_measure(self.histogram, self.population, 0.0)


@dataclass(frozen=True)
class Ensemble:
    """A set of per-run summaries keyed by run id; merging is set union, so
    it is associative and commutative, and every derived statistic is computed
    in run-id order."""

    runs: Mapping[str, RunSummary] = field(default_factory=dict)

    @classmethod
    def of(cls, summaries: Iterable[RunSummary]) -> "Ensemble":
        out = cls()
        for s in summaries:
            out = out.merge(cls({s.run_id: s}))
        return out

    def merge(self, other: "Ensemble") -> "Ensemble":
        runs = dict(self.runs)
        for key, s in other.runs.items():
            if key in runs and runs[key] != s:
                raise ValueError(f"conflicting summaries for run {key!r}")
            runs[key] = s
        return Ensemble(runs)

    def __len__(self) -> int:
        return len(self.runs)

    def mean_measure(self, K: int | None = None) -> np.ndarray:
        """Seed-averaged individual-level PMF ``out[k-1]``."""
        ordered = [self.runs[k] for k in sorted(self.runs)]
        dense = [size_pmf_from_counts(s.measure().renormalized()) for s in ordered]
        if K is None:
            K = max(d.size for d in dense)
        acc = np.zeros(K)
        for d in dense:
            m = min(K, d.size)
            acc[:m] += d[:m]
        return acc / len(ordered)

    def pooled_histogram(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for key in sorted(self.runs):
            for k, u in self.runs[key].histogram.items():
                out[k] = out.get(k, 0) + u
        return dict(sorted(out.items()))
