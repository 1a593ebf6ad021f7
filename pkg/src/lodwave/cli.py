"""Command-line entry point: ``lodwave {study,run,correctors,decay,selftest}``."""
import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .corrector import cached_corrector_set, measure_localization_decay
from .leapfrog import Variant, export_trajectory_csv
from .mesh import free_vertices
from .study import (EXAMPLES, CoarseStage, ExperimentConfig, make_problem,
                    run_convergence_study, simulate)

def _problem_args(p):
    p.add_argument("--example", choices=EXAMPLES, default="example2")
    p.add_argument("--coarse-level", type=int, required=True)
    p.add_argument("--fine-level", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1 / 64)


def build_parser():
    parser = argparse.ArgumentParser(prog="lodwave")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("study", help="convergence study from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("run", help="single coarse simulation")
    _problem_args(p)
    p.add_argument("--ell", type=int, default=2)
    p.add_argument("--method", choices=[v.value for v in Variant], default="lod")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dt", type=float, help="time step (default: CFL step)")
    p.add_argument("--zero-source", action="store_true")
    p.add_argument("--out", default="run")
    p.add_argument("--every", type=int, default=1, help="export every k-th state")
    p.add_argument("--fine-values", action="store_true",
                   help="export fine nodal values instead of coarse dofs")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("correctors", help="offline corrector stage only")
    _problem_args(p)
    p.add_argument("--ell", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("decay", help="localization decay table")
    _problem_args(p)
    p.add_argument("--ell-max", type=int, required=True)
    p.add_argument("--ell-min", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("selftest", help="fast property checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config(args, **extra):
    return ExperimentConfig(example=args.example, coarse_levels=[args.coarse_level],
                            fine_level=args.fine_level, seed=args.seed,
                            epsilon=args.epsilon, **extra)


def cmd_study(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.no_cache:
        cfg.use_cache = False
    table = run_convergence_study(cfg)
    failed = [r for r in table.rows if r.status != "ok"]
    print(json.dumps({"output_dir": cfg.output_dir, "rows": len(table.rows),
                      "failed_rows": len(failed)}))
    return 1 if failed else 0


def cmd_run(args):
    cfg = _config(args, ell=[args.ell], T=args.T, methods=[args.method],
                  zero_source=args.zero_source)
    setup = make_problem(cfg)
    stage = CoarseStage(setup, args.coarse_level)
    traj, energy = simulate(setup, stage, args.method, args.ell, dt=args.dt,
                            jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = None
    if args.fine_values:
        labels = [f"v{k}" for k in free_vertices(setup.fine, setup.bc)]
    export_trajectory_csv(traj, out / "trajectory.csv", args.every,
                          args.fine_values, labels)
    with open(out / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy"])
        for k, e in enumerate(energy.energy):
            w.writerow([repr((k + 0.5) * energy.dt), repr(float(e))])
    summary = {"dt": traj.dt, "steps": int(traj.steps[-1]),
               "relative_energy_drift": energy.relative_drift(),
               "output_dir": str(out)}
    print(json.dumps(summary))
    return 0


def cmd_correctors(args):
    setup = make_problem(_config(args))
    stage = CoarseStage(setup, args.coarse_level)
    report = []
    for ell in args.ell:
        t0 = time.perf_counter()
        cset = cached_corrector_set(stage.asm, ell, stage.IH, jobs=args.jobs)
        report.append({"ell": ell, "correctors": len(cset.correctors),
                       "key": cset.key(), "seconds": time.perf_counter() - t0})
    print(json.dumps(report))
    return 0


def cmd_decay(args):
    setup = make_problem(_config(args))
    stage = CoarseStage(setup, args.coarse_level)
    rows = measure_localization_decay(stage.asm, args.ell_max, args.ell_min,
                                      stage.IH, args.jobs)
    print("ell,residual")
    for ell, r in rows:
        print(f"{ell},{r:.6e}")
    values = [r for _, r in rows]
    return 0 if all(a > b for a, b in zip(values, values[1:])) else 1


def cmd_selftest(args):
    from .selftest import run_selftest
    results = run_selftest(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {"study": cmd_study, "run": cmd_run, "correctors": cmd_correctors,
            "decay": cmd_decay, "selftest": cmd_selftest}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # report every failure as JSON
        json.dump({"error": type(exc).__name__, "message": str(exc),
                   "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
