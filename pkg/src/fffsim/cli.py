"""Command-line entry point: ``fffsim run | compare | bench``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import kernels
from .config import ConfigError, ConfigParseError, load_config

log = logging.getLogger("fffsim")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fffsim", description="Thermal simulation of FFF printing.")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--mode", choices=["quiet", "hybrid", "adaptive"])
    run.add_argument("--probes-out", type=Path, metavar="DIR",
                     help="directory for probe_<i>.csv files")
    run.add_argument("--fields-out", type=Path, metavar="DIR", help="directory for VTK fields")
    run.add_argument("--metrics-out", type=Path, metavar="CSV")
    run.add_argument("--decision-log", type=Path, metavar="CSV")
    run.add_argument("--dump-schedule", type=Path, metavar="CSV")
    run.add_argument("--mesh-report", action="store_true", help="print the final mesh summary")

    cmp_ = sub.add_parser("compare", help="compare two run directories")
    cmp_.add_argument("--a", required=True, type=Path, help="reference run directory")
    cmp_.add_argument("--b", required=True, type=Path)
    cmp_.add_argument("--report", required=True, type=Path)

    bench = sub.add_parser("bench", help="run several modes and report relative timings")
    bench.add_argument("--config", required=True, type=Path)
    bench.add_argument("--modes", default="quiet,hybrid,adaptive")
    bench.add_argument("--report", required=True, type=Path)
    return ap


def cmd_run(args) -> int:
    from .activation import simulate
    from .coarsen import write_decision_log
    from .io import field_writer, write_probes
    from .toolpath import build_schedule

    cfg = load_config(args.config)
    mode = args.mode or cfg.scenario.activation_mode
    sched = build_schedule(cfg.scenario, cfg.process)
    if args.dump_schedule:
        sched.to_csv(args.dump_schedule)
    sink = field_writer(args.fields_out) if args.fields_out else None
    log.info("%s run: %d steps, dt %.6g s, kernels %s", mode, len(sched), cfg.time_step,
             kernels.BACKEND)
    res = simulate(cfg, mode, schedule=sched, field_sink=sink)
    log.info("done in %.2f s, final dofs %d", res.metrics.wall_time, res.mesh.n_dofs)
    if args.probes_out:
        write_probes(res.probes, args.probes_out)
    if args.metrics_out:
        args.metrics_out.parent.mkdir(parents=True, exist_ok=True)
        res.metrics.to_csv(args.metrics_out)
    if args.decision_log:
        write_decision_log(res.decisions, args.decision_log)
    if args.mesh_report:
        print(res.mesh.report())
    return 0


def cmd_compare(args) -> int:
    from .io import RunRecord, compare_runs

    rep = compare_runs(RunRecord.load(args.a), RunRecord.load(args.b))
    rep.write(args.report)
    rep.write_dofs(args.report.with_name(args.report.stem + "_dofs.csv"))
    for d in rep.probes:
        print(f"probe {d.probe}: max |dT| {d.max_abs:.3e} C, max rel {d.max_rel:.3e}")
    print(f"wall time ratio b/a: {rep.wall_ratio:.3f}")
    return 0


def cmd_bench(args) -> int:
    from .activation import simulate

    cfg = load_config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in ("quiet", "hybrid", "adaptive")]
    if bad or not modes:
        raise ValueError(f"unknown modes {bad}")
    rows = []
    for m in modes:
        res = simulate(cfg, m)
        met = res.metrics
        rows.append((m, met.wall_time, int(met.total_dofs.max()), float(met.iterations.mean())))
        log.info("%s: %.2f s", m, met.wall_time)
    ref = rows[0][1]
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "wall_s", f"relative_to_{rows[0][0]}", "max_dofs", "mean_cg_iterations"])
        for m, t, d, it in rows:
            w.writerow([m, f"{t:.3f}", f"{t / ref:.3f}", d, f"{it:.2f}"])
    for m, t, _, _ in rows:
        print(f"{m:9s} {t:10.2f} s  {t / ref:6.3f}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "compare": cmd_compare, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except (ConfigError, ConfigParseError, FileNotFoundError, ValueError) as exc:
        print(f"fffsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
