"""Compiled vs pure-Python kernels on one layer's worth of step solves.

    python benchmarks/bench_kernels.py [--size MM] [--layers N] [--steps S]

Builds a dense block, deposits its first layer with both backends on
identical matrices, and reports time per solve, CG iterations and the largest
difference between the two solutions on active dofs. (Quiet dofs carry rows
scaled by the quiet factor, so the solver tolerance barely constrains them.)
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fffsim import kernels
from fffsim.activation import DepositionRun
from fffsim.config import MM, SimulationConfig


def run(backend, cfg, steps):
    r = DepositionRun(cfg, "quiet", backend=backend)
    r.start_segment(0, 0, cfg.total_layers)
    mesh = r.mesh
    cells = mesh.owner[0]
    el = cells[cells >= 0]
    nodes = np.unique(mesh.conn[el])
    window = np.unique(mesh.node_dof[nodes][mesh.node_w[nodes] > 0])
    r.window[window] = True
    from fffsim.linsolve import WindowSolver
    r.solver = WindowSolver(r.pattern, window, backend)
    r.locked = r.bed.copy()
    t0 = time.perf_counter()
    r.solver.factor_leading(r.a_data, r.c_data, r.dt, r.locked)
    setup = time.perf_counter() - t0
    s0, _ = r.sched.layer_steps(0)
    its, solve = [], 0.0
    for s in range(s0, s0 + steps):
        t0 = time.perf_counter()
        r.advance(s)
        solve += time.perf_counter() - t0
        its.append(r._last[0])
    return r, setup, solve / steps, float(np.mean(its))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=float, default=14.0, help="block footprint edge, mm")
    ap.add_argument("--layers", type=int, default=20)
    ap.add_argument("--steps", type=int, default=100)
    args = ap.parse_args(argv)
    cfg = SimulationConfig().replace(**{
        "scenario.width": args.size * MM, "scenario.length": args.size * MM,
        "scenario.height": args.layers * 0.2 * MM})
    rows = []
    backends = [("python", kernels.python)]
    if kernels.compiled_available():
        backends.insert(0, ("compiled", kernels.compiled))
    results = {}
    for name, be in backends:
        r, setup, per, it = run(be, cfg, args.steps)
        results[name] = r.x[r.dof_active]
        rows.append((name, r.mesh.n_dofs, setup, per, it))
    print(f"{'backend':10s} {'dofs':>8s} {'factor_s':>10s} {'ms/step':>10s} {'cg_it':>7s}")
    for name, n, setup, per, it in rows:
        print(f"{name:10s} {n:8d} {setup:10.4f} {per * 1e3:10.3f} {it:7.2f}")
    if len(rows) == 2:
        print(f"speedup (python / compiled): {rows[1][3] / rows[0][3]:.1f}x")
        diff = np.abs(results["compiled"] - results["python"]).max()
        print(f"max |T_compiled - T_python| on active dofs: {diff:.3e} C")


if __name__ == "__main__":
    main()
