"""Library entry points behind the ``fitsim`` subcommands.

Every artifact written here carries the generating configuration (directly,
or through the run manifest next to it).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fitsim import __version__, stats, theory
from fitsim.harness import snapshot as snap
from fitsim.harness.config import ConfigError, RunConfig
from fitsim.model import EVENT_KINDS, EventBatch, ModelState, Observer, StateView, derive_constants, run

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FINAL_SNAPSHOT = "snapshot_final.txt"
HISTOGRAMS = "histograms.csv"
FITNESS_BINS = "fitness_bins.csv"
EVENTS = "events.csv"


class ArtifactError(RuntimeError):
    pass


def _constants_dict(p: float, r: float) -> dict:
    k = derive_constants(p, r)
    return {"gamma": k.gamma, "f_c": k.f_c, "c": k.c if math.isfinite(k.c) else None, "regime": k.regime}


class SnapshotWriter(Observer):
    def __init__(self, directory: Path, every: int):
        self.directory = directory
        self.every = every
        self.written: list[str] = []

    def on_snapshot(self, view: StateView) -> None:
        path = self.directory / f"snapshot_{view.n:012d}.txt"
        snap.Snapshot.from_view(view).write(path)
        self.written.append(path.name)


class EventWriter(Observer):
    wants_events = True

    def __init__(self, path: Path):
        self.path = path
        if not path.exists():
            path.write_text("n,kind,fitness,T\n")

    def on_events(self, batch: EventBatch) -> None:
        with self.path.open("a") as fh:
            for j in range(len(batch)):
                fit = float(batch.fitness[j])
                fit_s = "" if math.isnan(fit) else repr(fit)
                fh.write(f"{batch.first_n + j},{EVENT_KINDS[int(batch.kinds[j])]},{fit_s},{int(batch.population[j])}\n")


def histograms_csv(view: StateView, thresholds: Sequence[float]) -> str:
    lines = ["f,k,count"]
    for f in thresholds:
        for k, u in stats.site_histogram(view.fitness, view.sizes, f).items():
            lines.append(f"{f!r},{k},{u}")
    return "\n".join(lines) + "\n"


def fitness_bins_csv(view: StateView, bins: int) -> str:
    left, counts = stats.fitness_profile(view.fitness, view.sizes, bins)
    lines = ["fitness_bin,count"]
    lines += [f"{x!r},{c}" for x, c in zip(left.tolist(), counts.tolist())]
    return "\n".join(lines) + "\n"


def simulate(config: RunConfig) -> dict:
    """Run (or resume) a simulation and write its artifacts; returns the manifest."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    params = config.params
    state: ModelState | None = None
    if config.resume_from:
        snapshot = snap.read(config.resume_from)
        if snapshot.params != params:
            raise ConfigError(f"snapshot parameters {snapshot.params} differ from the configuration {params}")
        state = snapshot.to_state()
    start_n = state.n if state else 0
    remaining = config.n_steps - start_n
    if remaining < 0:
        raise ConfigError(f"snapshot is at step {start_n}, beyond the requested horizon {config.n_steps}")

    observers: list[Observer] = []
    writer = None
    if config.snapshot_every:
        writer = SnapshotWriter(out, config.snapshot_every)
        observers.append(writer)
    if config.log_events:
        observers.append(EventWriter(out / EVENTS))

    t0 = time.perf_counter()
    log.info("running %d steps from n=%d (p=%s r=%s seed=%s)", remaining, start_n, params.p, params.r, params.seed)
    state = run(params, remaining, observers, state=state)
    elapsed = time.perf_counter() - t0

    view = state.view()
    snap.Snapshot.from_view(view).write(out / FINAL_SNAPSHOT)
    artifacts = [FINAL_SNAPSHOT]
    if state.n > 0:
        (out / HISTOGRAMS).write_text(histograms_csv(view, config.thresholds()))
        (out / FITNESS_BINS).write_text(fitness_bins_csv(view, config.fitness_bins))
        artifacts += [HISTOGRAMS, FITNESS_BINS]
    if config.log_events:
        artifacts.append(EVENTS)
    manifest = {
        "fitsim_version": __version__,
        "config": config.to_dict(),
        "constants": _constants_dict(params.p, params.r),
        "started_from_step": start_n,
        "n": state.n,
        "population": view.population,
        "sites": int(view.sizes.size),
        "f_grid": list(config.thresholds()),
        "final_snapshot": FINAL_SNAPSHOT,
        "snapshots": writer.written if writer else [],
        "artifacts": artifacts,
        "elapsed_seconds": round(elapsed, 3),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- theory tables and comparisons -------------------------------------------


def theory_rows(p: float, r: float, f: float, K: int) -> list[tuple[int, float | None, float, float]]:
    """``(k, beta_k, rho_k, site_proportion)``; beta_k is None when f <= f_c."""
    k_const = derive_constants(p, r)
    if not k_const.transient:
        raise theory.DomainError(f"limit laws need pr > 1 - p (got p={p}, r={r})")
    if K < 1:
        raise theory.DomainError("K must be >= 1")
    ks = np.arange(1, K + 1)
    rho = np.atleast_1d(theory.rho_k(k_const.c, ks))
    site = np.atleast_1d(theory.site_proportion_limit(k_const, ks))
    beta = np.atleast_1d(theory.beta_k(k_const, f, ks)) if f > k_const.f_c else [None] * K
    return [(int(k), None if b is None else float(b), float(q), float(s))
            for k, b, q, s in zip(ks, beta, rho, site)]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def theory_csv(p: float, r: float, f: float, K: int) -> str:
    lines = ["k,beta_k,rho_k,site_proportion"]
    lines += [f"{k},{_fmt(b)},{_fmt(q)},{_fmt(s)}" for k, b, q, s in theory_rows(p, r, f, K)]
    return "\n".join(lines) + "\n"


@dataclass
class Comparison:
    rows: list[tuple[int, float, float, float]]
    summary: dict
    passed: bool = True
    failures: list[str] = field(default_factory=list)

    def csv(self) -> str:
        lines = ["k,emp,theory,percent_error"]
        lines += [f"{k},{e!r},{t!r},{pe!r}" for k, e, t, pe in self.rows]
        return "\n".join(lines) + "\n"


def load_final(run_dir: str | Path) -> tuple[dict, snap.Snapshot]:
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"no readable run manifest in {run_dir}: {exc}") from exc
    return manifest, snap.read(run_dir / manifest["final_snapshot"])


def compare_snapshot(s: snap.Snapshot, f: float, K: int) -> Comparison:
    params = s.params
    k_const = derive_constants(params.p, params.r)
    if not k_const.transient:
        raise theory.DomainError("comparison against limit laws needs the transient regime")
    hist = stats.site_histogram(s.fitness, s.sizes, f)
    if not hist:
        raise ArtifactError(f"no sites with fitness >= {f}")
    K_full = max(hist)
    if params.variant == "proportional":
        emp_full = stats.size_pmf_from_counts(stats.empirical_measure(hist, s.population, f).renormalized())
        q_full = np.atleast_1d(theory.rho_k(k_const.c, np.arange(1, K_full + 1)))
        theory_rows_K = [row[2] for row in theory_rows(params.p, params.r, f, K)]
        level = "individual"
    else:
        counts = stats.size_pmf_from_counts(hist)
        emp_full = counts / counts.sum()
        q = theory.geometric_variant_param(params.p, params.r)
        q_full = np.atleast_1d(theory.geometric_pmf(q, np.arange(1, K_full + 1)))
        theory_rows_K = np.atleast_1d(theory.geometric_pmf(q, np.arange(1, K + 1))).tolist()
        level = "site"
    emp_K = np.zeros(K)
    m = min(K, emp_full.size)
    emp_K[:m] = emp_full[:m]
    rows = []
    for k in range(1, K + 1):
        t = theory_rows_K[k - 1]
        pe = stats.percent_error(emp_K, np.asarray(theory_rows_K), k) if t > 0 else math.nan
        rows.append((k, float(emp_K[k - 1]), float(t), pe))
    summary = {
        "params": {"p": params.p, "r": params.r, "variant": params.variant, "seed": params.seed, "t0": params.t0},
        "n": s.n,
        "population": s.population,
        "f": f,
        "K": K,
        "level": level,
        "tv": stats.tv_distance(emp_full, q_full),
        "ks_fitness": stats.ks_uniform_fitness(s.fitness, s.sizes, k_const, weighted=level == "individual"),
        "theory_tail_mass_beyond_K": max(0.0, 1.0 - math.fsum(theory_rows_K)),
        "empirical_mass_beyond_K": float(max(0.0, 1.0 - emp_K.sum())),
        "max_percent_error_k_le_10": max(pe for k, _, _, pe in rows[:10]),
        "constants": _constants_dict(params.p, params.r),
    }
    if params.variant == "proportional":
        site_counts = {k: u / sum(hist.values()) for k, u in hist.items()}
        ind = stats.empirical_measure(hist, s.population, f).renormalized()
        try:
            summary["tail_exponent_site"] = stats.tail_exponent_fit(stats.log_binned(site_counts, hist), 10).exponent
            summary["tail_exponent_individual"] = stats.tail_exponent_fit(stats.log_binned(ind, hist), 10).exponent
        except ValueError:
            summary["tail_exponent_site"] = summary["tail_exponent_individual"] = None
        summary["expected_tail_exponent_individual"] = k_const.c
        # empirical mass over its large-k asymptote; near 1 where the tail is resolved
        summary["powerlaw_ratio"] = {
            str(k): float(emp_full[k - 1] / theory.rho_tail_asymptote(k_const.c, k))
            for k in (10, 30, 100) if k <= emp_full.size
        }
    return Comparison(rows, summary)


def compare(run_dir: str | Path, f: float, K: int, out: str | Path | None = None,
            max_tv: float | None = None, max_percent_error: float | None = None,
            max_ks: float | None = None) -> Comparison:
    manifest, s = load_final(run_dir)
    result = compare_snapshot(s, f, K)
    result.summary["config"] = manifest.get("config")
    checks = [("tv", max_tv), ("max_percent_error_k_le_10", max_percent_error), ("ks_fitness", max_ks)]
    for key, limit in checks:
        if limit is not None and not result.summary[key] < limit:
            result.failures.append(f"{key}={result.summary[key]:.6g} >= {limit}")
    result.passed = not result.failures
    result.summary["assertions"] = {"passed": result.passed, "failures": result.failures}
    base = Path(out) if out else Path(run_dir) / "comparison"
    base.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{base}.csv").write_text(result.csv())
    Path(f"{base}_summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    return result


# -- sweeps -------------------------------------------------------------------

SWEEP_COLUMNS = ["p", "r", "seed", "run_seed", "regime", "n", "T", "sites", "T_over_n",
                 "tv", "ks_fitness", "mass_fraction_below_fc", "max_size_below_fc", "status"]


def cell_seed(base_seed: int, p: float, r: float) -> int:
    """Independent 64-bit stream key for one sweep cell."""
    ss = np.random.SeedSequence([int(base_seed), int(round(p * 1e9)), int(round(r * 1e9))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _sweep_cell(config: RunConfig, seed: int) -> dict:
    row = {"p": config.p, "r": config.r, "seed": seed, "run_seed": config.seed}
    manifest = simulate(config)
    k_const = derive_constants(config.p, config.r)
    row.update(regime=k_const.regime, n=manifest["n"], T=manifest["population"], sites=manifest["sites"],
               T_over_n=manifest["population"] / manifest["n"] if manifest["n"] else 0.0)
    if k_const.transient and manifest["population"] > 0:
        s = snap.read(Path(config.out) / FINAL_SNAPSHOT)
        cmp_ = compare_snapshot(s, 0.0, 10)
        drop = stats.drop_off(s.fitness, s.sizes, k_const.f_c)
        row.update(tv=cmp_.summary["tv"], ks_fitness=cmp_.summary["ks_fitness"],
                   mass_fraction_below_fc=drop.mass_fraction_below, max_size_below_fc=drop.max_size_below)
    row["status"] = "ok"
    return row


def _sweep_cell_safe(args) -> dict:
    config, seed = args
    try:
        return _sweep_cell(config, seed)
    except Exception as exc:  # reported per cell
        return {"p": config.p, "r": config.r, "seed": seed, "run_seed": config.seed,
                "status": f"failed: {type(exc).__name__}: {exc}"}


def sweep(base: RunConfig, ps: Sequence[float], rs: Sequence[float], seeds: Sequence[int],
          workers: int = 1, allow_recurrent: bool = False) -> tuple[list[dict], Path]:
    bad = [(p, r) for p in ps for r in rs if not derive_constants(p, r).transient]
    if bad and not allow_recurrent:
        raise ConfigError(
            f"grid points {bad} are not transient (need p*r > 1 - p); pass --allow-recurrent to run them"
        )
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in sorted(ps):
        for r in sorted(rs):
            for seed in sorted(seeds):
                cell = base.with_overrides(p=p, r=r, seed=cell_seed(seed, p, r), resume_from=None,
                                           out=str(out / f"p{p:g}_r{r:g}_s{seed}"))
                object.__setattr__(cell, "f_grid", base.f_grid)
                jobs.append((cell, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell_safe, jobs))
    else:
        rows = [_sweep_cell_safe(job) for job in jobs]
    rows.sort(key=lambda d: (d["p"], d["r"], d["seed"]))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, restval="", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    path = out / "sweep.csv"
    path.write_text(buf.getvalue())
    (out / "sweep_config.json").write_text(json.dumps(
        {"base": base.to_dict(), "p": list(ps), "r": list(rs), "seeds": list(seeds),
         "allow_recurrent": allow_recurrent}, indent=2, sort_keys=True) + "\n")
    return rows, path


# -- lemma check --------------------------------------------------------------


def lemma_check(p: float, n: int, trials: int, epsilon: float, n_max: int, seed: int,
                out: str | Path) -> stats.CouplingReport:
    if n_max < 10:
        raise ConfigError("n_max must be at least 10")
    grid = sorted({int(round(n_max * j / 10)) for j in range(1, 11)})
    report = stats.coupling_check(p, n, trials, seed=seed, epsilon=epsilon, curve_n=grid)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "concentration.csv").write_text(report.curve_csv())
    (out / "coupling_tv.csv").write_text(report.tv_csv())
    summary = {
        "p": p, "n": n, "trials": trials, "epsilon": epsilon, "n_max": n_max, "seed": seed,
        "tv_walk_exact": report.tv_walk_exact, "tv_chain_exact": report.tv_chain_exact,
        "tv_walk_chain": report.tv_walk_chain, "pathwise_identical": report.pathwise_identical,
        "log_slope": None if math.isnan(report.log_slope) else report.log_slope,
        "exceedance_nonincreasing": bool(np.all(np.diff(report.curve_exceed) <= 0)),
    }
    (out / "lemma_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return report
