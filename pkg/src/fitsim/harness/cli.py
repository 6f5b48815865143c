"""``fitsim`` command line.

Exit codes: 0 success, 1 invalid input, 2 runtime or I/O failure,
3 a ``compare --assert`` threshold was missed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from fitsim import __version__, theory
from fitsim.harness import runner, snapshot
from fitsim.harness.config import ConfigError, load_config
from fitsim.harness.snapshot import SnapshotError
from fitsim.model import VARIANTS, ObserverError, derive_constants

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3

log = logging.getLogger("fitsim")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _run_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    sp.add_argument("--p", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--steps", type=int, dest="n_steps")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--t0", type=int, help="initial number of singleton sites")
    sp.add_argument("--snapshot-every", type=int, dest="snapshot_every")
    sp.add_argument("--f", type=_floats, dest="f_grid", help="comma-separated fitness thresholds")
    sp.add_argument("--out")
    sp.add_argument("--log-events", action="store_true", default=None, dest="log_events")
    sp.add_argument("--fitness-bins", type=int, dest="fitness_bins")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fitsim", description="Fitness-ranked site growth simulator.")
    ap.add_argument("--version", action="version", version=f"fitsim {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run a simulation and write its artifacts")
    _run_flags(sp)

    sp = sub.add_parser("resume", help="continue a run from a snapshot")
    _run_flags(sp)
    sp.add_argument("--from", dest="resume_from", required=True, help="snapshot file")

    sp = sub.add_parser("compare", help="compare a finished run with the limit law")
    sp.add_argument("run_dir", nargs="?", help="run directory (default: --out)")
    sp.add_argument("--out", help="run directory, when run_dir is not given")
    sp.add_argument("--f", type=float, default=0.0)
    sp.add_argument("--K", type=int, default=10)
    sp.add_argument("--output", help="path prefix for <prefix>.csv and <prefix>_summary.json")
    sp.add_argument("--assert", dest="do_assert", action="store_true",
                    help="exit 3 when a threshold below is missed")
    sp.add_argument("--max-tv", type=float)
    sp.add_argument("--max-percent-error", type=float)
    sp.add_argument("--max-ks", type=float)

    sp = sub.add_parser("theory", help="print limit-law tables as CSV")
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--f", type=float, default=None, help="fitness threshold (default: midpoint of [f_c, 1])")
    sp.add_argument("--K", type=int, default=20)
    sp.add_argument("--out", help="write to this file instead of stdout")

    sp = sub.add_parser("sweep", help="run a (p, r) grid over several seeds")
    _run_flags(sp)
    sp.add_argument("--p-grid", type=_floats, required=True)
    sp.add_argument("--r-grid", type=_floats, required=True)
    sp.add_argument("--seeds", type=_ints, required=True)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--allow-recurrent", action="store_true")

    sp = sub.add_parser("lemma-check", help="population concentration and coupling check")
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--n", type=int, default=12, help="horizon for the coupling TV table")
    sp.add_argument("--n-max", type=int, default=1000, help="largest n on the concentration curve")
    sp.add_argument("--trials", type=int, default=100_000)
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="lemma")
    return ap


def _config(args, **extra):
    keys = ["p", "r", "n_steps", "seed", "variant", "t0", "snapshot_every", "f_grid", "out",
            "log_events", "fitness_bins"]
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides.update(extra)
    return load_config(args.config, overrides)


def _cmd_simulate(args, **extra) -> int:
    manifest = runner.simulate(_config(args, **extra))
    print(json.dumps({"n": manifest["n"], "population": manifest["population"], "sites": manifest["sites"],
                      "out": manifest["config"]["out"]}))
    return EXIT_OK


def _cmd_resume(args) -> int:
    s = snapshot.read(args.resume_from)
    # parameters default to the snapshot's own
    base = {"p": s.params.p, "r": s.params.r, "variant": s.params.variant, "seed": s.params.seed,
            "t0": s.params.t0}
    overrides = {k: v for k, v in base.items() if getattr(args, k, None) is None}
    return _cmd_simulate(args, resume_from=args.resume_from, **overrides)


def _cmd_compare(args) -> int:
    run_dir = args.run_dir or args.out
    if not run_dir:
        raise ConfigError("compare needs a run directory")
    limits = {"max_tv": args.max_tv, "max_percent_error": args.max_percent_error, "max_ks": args.max_ks}
    if args.do_assert and all(v is None for v in limits.values()):
        raise ConfigError("--assert needs at least one of --max-tv, --max-percent-error, --max-ks")
    result = runner.compare(run_dir, args.f, args.K, out=args.output, **limits)
    keys = ["tv", "ks_fitness", "max_percent_error_k_le_10", "theory_tail_mass_beyond_K"]
    print(json.dumps({k: result.summary[k] for k in keys}))
    if args.do_assert and not result.passed:
        for failure in result.failures:
            print(f"assertion failed: {failure}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _cmd_theory(args) -> int:
    f = args.f
    if f is None:
        f = 0.5 * (derive_constants(args.p, args.r).f_c + 1.0)
    text = runner.theory_csv(args.p, args.r, f, args.K)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _config(args, p=args.p_grid[0], r=args.r_grid[0])
    rows, path = runner.sweep(base, args.p_grid, args.r_grid, args.seeds, args.workers, args.allow_recurrent)
    failed = [row for row in rows if row["status"] != "ok"]
    for row in failed:
        print(f"cell p={row['p']} r={row['r']} seed={row['seed']}: {row['status']}", file=sys.stderr)
    print(json.dumps({"cells": len(rows), "failed": len(failed), "summary": str(path)}))
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_lemma(args) -> int:
    report = runner.lemma_check(args.p, args.n, args.trials, args.epsilon, args.n_max, args.seed, args.out)
    print(json.dumps({"tv_walk_exact": report.tv_walk_exact, "tv_chain_exact": report.tv_chain_exact,
                      "pathwise_identical": report.pathwise_identical, "log_slope": report.log_slope}))
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate,
    "resume": _cmd_resume,
    "compare": _cmd_compare,
    "theory": _cmd_theory,
    "sweep": _cmd_sweep,
    "lemma-check": _cmd_lemma,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that is a validation error here
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SnapshotError, theory.DomainError, ValueError) as exc:
        print(f"fitsim: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (runner.ArtifactError, ObserverError, OSError, RuntimeError) as exc:
        print(f"fitsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
