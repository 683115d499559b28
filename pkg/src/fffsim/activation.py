"""Deposition by sequential element activation.

One time step deposits one polymer element. Newly activated polymer elements
get their nodes locked to the activation temperature for that step only; the
bed plane stays at the bed temperature throughout. In quiet mode one mesh holds
the whole part from the start; in hybrid mode the mesh is rebuilt every
``quiet_layers_per_remesh`` layers.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import SimulationConfig
from .femcore import (ThermalState, assemble, block_triplets, element_matrices,
                      initial_state, patch_convection, vector_triplets)
from .homog import effective_material
from .linsolve import WindowSolver
from .mesh import Band, HexMesh, build_mesh, fine_bands, level_layouts
from .toolpath import AIR, DepositionEvent, DepositionSchedule, build_schedule

log = logging.getLogger("fffsim")

_DIRS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]])
_OPPOSITE = np.array([1, 0, 3, 2, 5, 4])


@dataclass
class ProbeSeries:
    location: tuple
    times: list = field(default_factory=list)
    temps: list = field(default_factory=list)

    def arrays(self):
        return np.asarray(self.times), np.asarray(self.temps)


@dataclass
class RemeshingStep:
    index: int
    first_step: int
    covered_layers: range
    quiet_layers: range
    dofs: int
    wall: float = 0.0


@dataclass
class RunMetrics:
    n_steps: int
    time: np.ndarray = None
    active_dofs: np.ndarray = None
    total_dofs: np.ndarray = None
    remesh_index: np.ndarray = None
    iterations: np.ndarray = None
    residual: np.ndarray = None
    remeshing: list = field(default_factory=list)
    coarsening_events: list = field(default_factory=list)
    wall_time: float = 0.0

    def __post_init__(self):
        n = self.n_steps
        if self.time is None:
            self.time = np.zeros(n)
            self.active_dofs = np.zeros(n, np.int64)
            self.total_dofs = np.zeros(n, np.int64)
            self.remesh_index = np.zeros(n, np.int64)
            self.iterations = np.zeros(n, np.int64)
            self.residual = np.zeros(n)

    def to_csv(self, path) -> None:
        events = {}
        for ev in self.coarsening_events:
            events.setdefault(ev["step"], []).append(f"{ev['band_lo']}-{ev['band_hi']}@{ev['level']}")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t_s", "active_dofs", "total_dofs", "remesh_index",
                        "cg_iterations", "residual", "coarsening"])
            for s in range(self.n_steps):
                w.writerow([s, repr(float(self.time[s])), int(self.active_dofs[s]),
                            int(self.total_dofs[s]), int(self.remesh_index[s]),
                            int(self.iterations[s]), f"{self.residual[s]:.3e}",
                            ";".join(events.get(s, []))])
            w.writerow([])
            w.writerow(["wall_time_s", f"{self.wall_time:.6f}"])


@dataclass
class SimulationResult:
    mode: str
    config: SimulationConfig
    probes: list
    metrics: RunMetrics
    mesh: HexMesh
    state: ThermalState
    decisions: list = field(default_factory=list)
    recorded: list = field(default_factory=list)  # (remesh index, bands, lattice temperatures)

    @property
    def fine_layer_history(self) -> np.ndarray:
        """Fine (level 0) built layers at the end of every remeshing step."""
        return np.array([sum(b.hi - b.lo for b in bands if b.level == 0)
                         for _, bands, _ in self.recorded])


class DepositionRun:
    """State machine shared by the quiet, hybrid and adaptive drivers."""

    def __init__(self, config: SimulationConfig, mode: str | None = None,
                 schedule: DepositionSchedule | None = None, controller=None,
                 field_sink=None, record_states: bool = False, backend=None):
        self.cfg = config
        self.mode = mode or config.scenario.activation_mode
        self.sched = schedule or build_schedule(config.scenario, config.process)
        self.grid = self.sched.grid
        self.mats = self.sched.materials
        self.cell_active = np.zeros(self.mats.shape, bool)
        self.dt = config.time_step
        cp = config.coarsening
        self.cf = cp.factor
        self.layouts = level_layouts(self.grid.nx, self.grid.ny, cp.factor, cp.max_levels)
        self.alpha = self.sched.polymer_fraction()
        self.coarse_material = effective_material(self.alpha, config.air, config.polymer)
        self.controller = controller
        self.field_sink = field_sink
        self.record_states = record_states
        self.backend = backend
        self.bands: list[Band] = []
        g = self.grid
        self.lattice = np.full((g.n_layers + 1) * (g.ny + 1) * (g.nx + 1), np.nan)
        self.t = 0.0
        self.step_no = 0
        self.probes = [ProbeSeries(tuple(p)) for p in config.probes()]
        self.metrics = RunMetrics(len(self.sched))
        self.decisions = []
        self.recorded = []
        n = len(self.sched)
        self.field_steps = {max(0, round(f * n) - 1): f for f in config.output.field_fractions}

    # ------------------------------------------------------------ plan

    def segments(self):
        n = self.grid.n_layers
        if self.mode == "quiet":
            return [(0, n)]
        nh = self.cfg.coarsening.quiet_layers_per_remesh
        return [(lo, min(lo + nh, n)) for lo in range(0, n, nh)]

    def run(self) -> SimulationResult:
        wall0 = time.perf_counter()
        for idx, (lo, top) in enumerate(self.segments()):
            t0 = time.perf_counter()
            self.start_segment(idx, lo, top)
            first = self.step_no
            for layer in range(lo, top):
                self.run_layer(layer)
            self.end_segment(idx, lo, top)
            wall = time.perf_counter() - t0
            self.metrics.remeshing.append(RemeshingStep(
                idx, first, range(0, top), range(lo, top), self.mesh.n_dofs, wall))
            log.info("remesh step %d: layers %d-%d, dofs %d, wall %.2f s",
                     idx, lo, top - 1, self.mesh.n_dofs, wall)
        self.dwell()
        self.metrics.wall_time = time.perf_counter() - wall0
        T = self.mesh.expand(self.x)
        state = ThermalState(T, self.t, {int(n): self.cfg.process.bed_temperature
                                         for n in np.flatnonzero(self.mesh.node_ijk[:, 2] == 0)})
        return SimulationResult(self.mode, self.cfg, self.probes, self.metrics, self.mesh,
                                state, self.decisions, self.recorded)

    # ------------------------------------------------------------ segments

    def build(self, bands) -> HexMesh:
        cfg = self.cfg
        return build_mesh(self.grid, self.mats, bands, self.layouts, self.cell_active,
                          cfg.polymer, cfg.air, self.coarse_material, self.cf)

    def start_segment(self, idx: int, lo: int, top: int) -> None:
        cfg, pr = self.cfg, self.cfg.process
        mesh = self.build(self.bands + fine_bands(len_bands(self.bands), top))
        if idx == 0:
            T = initial_state(mesh, pr.ambient_temperature, pr.bed_temperature).T
        else:
            T = map_lattice(self.lattice, mesh, pr.ambient_temperature)
        self.mesh = mesh
        self.x = mesh.restrict(T)
        sys_ = assemble(mesh, pr.convection_coefficient, pr.ambient_temperature,
                        cfg.solver.quiet_scale, cfg.solver.lumped_capacitance)
        self.system = sys_
        self.pattern = sys_.pattern
        self.c_data = sys_.c_data
        self.k_data = sys_.k_data
        self.a_data = self.c_data / self.dt + self.k_data
        self.f = sys_.f
        self.bed = np.zeros(mesh.n_dofs, bool)
        self.bed[sys_.bed_dofs] = True
        self.x[self.bed] = pr.bed_temperature
        self.dof_active = np.zeros(mesh.n_dofs, bool)
        act = np.flatnonzero(mesh.active)
        if len(act):
            self._mark_active_dofs(act)
        self.remesh_idx = idx
        self.window = np.zeros(mesh.n_dofs, bool)
        self._probe_ctx = []
        for series in self.probes:
            e = mesh.element_at(series.location)
            if e >= 0:
                nodes = mesh.conn[e]
                self._probe_ctx.append((series, e, nodes,
                                        mesh.interpolation_weights(e, series.location)))

    def end_segment(self, idx: int, lo: int, top: int) -> None:
        mesh = self.mesh
        T = mesh.expand(self.x)
        self.lattice[:] = np.nan
        self.lattice[mesh.node_lattice()] = T
        self.bands = self.bands + fine_bands(len_bands(self.bands), top)
        if self.record_states:
            self.recorded.append((idx, list(self.bands), self.lattice.copy()))
        if self.field_sink and self.cfg.output.remesh_fields:
            self.field_sink(f"remesh_{idx:04d}", mesh, T)
        if self.controller is not None and top < self.grid.n_layers:
            self.controller(self, idx)

    # ------------------------------------------------------------ stepping

    def run_layer(self, layer: int) -> None:
        mesh = self.mesh
        cells = mesh.owner[layer]
        el = cells[cells >= 0]
        nodes = np.unique(mesh.conn[el])
        d, w = mesh.node_dof[nodes], mesh.node_w[nodes]
        window = np.unique(d[w > 0])
        self.window[:] = False
        self.window[window] = True
        self.solver = WindowSolver(self.pattern, window, self.backend)
        self.locked = self.bed.copy()
        self.solver.factor_leading(self.a_data, self.c_data, self.dt, self.locked)
        s0, s1 = self.sched.layer_steps(layer)
        for s in range(s0, s1):
            self.advance(s)

    def advance(self, s: int) -> None:
        sched, mesh, pr = self.sched, self.mesh, self.cfg.process
        k, j, i = int(sched.layer[s]), int(sched.j[s]), int(sched.i[s])
        e = int(mesh.owner[k, j, i])
        x_old = self.x.copy()
        self.activate_elements([e])
        al, aj, ai = sched.air_cells(s)
        if len(al):
            self.activate_elements(mesh.owner[al, aj, ai].tolist())
        nodes = mesh.conn[e]
        nodes = nodes[~mesh.dependent[nodes]]
        lock = mesh.node_dof[nodes, 0]
        lock = lock[~self.bed[lock]]
        self.locked[lock] = True
        self.x[lock] = pr.activation_temperature
        self.solve_step(x_old)
        self.locked[lock] = False
        self.record(s)

    def solve_step(self, x_old: np.ndarray) -> None:
        self.solver.factor_window(self.a_data, self.c_data, self.dt, self.locked)
        sv = self.cfg.solver
        it, res = self.solver.solve(self.f, x_old, self.x, sv.tolerance, sv.max_iterations)
        self._last = (it, res)
        self.t += self.dt

    def record(self, s: int) -> None:
        m = self.metrics
        m.time[s] = self.t
        m.total_dofs[s] = self.mesh.n_dofs
        m.active_dofs[s] = self.n_active_dofs
        m.remesh_index[s] = self.remesh_idx
        m.iterations[s], m.residual[s] = self._last
        self.step_no = s + 1
        x = self.x
        for series, e, nodes, wts in self._probe_ctx:
            if self.mesh.active[e]:
                tn = (x[self.mesh.node_dof[nodes]] * self.mesh.node_w[nodes]).sum(axis=1)
                series.times.append(self.t)
                series.temps.append(float(tn @ wts))
        if self.field_sink and s in self.field_steps:
            pct = int(round(self.field_steps[s] * 100))
            self.field_sink(f"progress_{pct:03d}", self.mesh, self.mesh.expand(x))

    def dwell(self) -> None:
        n = int(round(self.cfg.process.dwell / self.dt))
        if n <= 0:
            return
        self.solver = WindowSolver(self.pattern, np.zeros(0, np.int64), self.backend)
        self.locked = self.bed.copy()
        self.solver.factor_leading(self.a_data, self.c_data, self.dt, self.locked)
        for _ in range(n):
            self.solve_step(self.x.copy())
            for series, e, nodes, wts in self._probe_ctx:
                tn = (self.x[self.mesh.node_dof[nodes]] * self.mesh.node_w[nodes]).sum(axis=1)
                series.times.append(self.t)
                series.temps.append(float(tn @ wts))

    # ------------------------------------------------------------ activation

    def _mark_active_dofs(self, elements) -> None:
        nodes = self.mesh.conn[elements].ravel()
        d, w = self.mesh.node_dof[nodes], self.mesh.node_w[nodes]
        self.dof_active[d[w > 0]] = True
        self.n_active_dofs = int(self.dof_active.sum())

    def activate_elements(self, elements: list) -> None:
        """Restore full properties of quiet elements and update free surfaces."""
        mesh, pr = self.mesh, self.cfg.process
        els = np.asarray(elements, np.int64)
        if np.any(els < 0) or np.any(mesh.active[els]):
            raise RuntimeError(f"double or invalid activation of elements {elements}")
        K, C = element_matrices(mesh, els, self.cfg.solver.lumped_capacitance)
        fac = 1.0 - self.cfg.solver.quiet_scale
        rows, cols, (kv, cv) = block_triplets(mesh, mesh.conn[els], [K * fac, C * fac])
        self._add(rows, cols, kv, cv)
        patches = []
        for e in els:
            mesh.active[e] = True
            i0, _, j0, _, k0, _ = mesh.box[e]
            self.cell_active[k0, j0, i0] = True
            for d, (di, dj, dk) in enumerate(_DIRS):
                ni, nj, nk = i0 + di, j0 + dj, k0 + dk
                inside = (0 <= ni < self.grid.nx and 0 <= nj < self.grid.ny
                          and 0 <= nk < mesh.n_layers)
                nb = mesh.owner[nk, nj, ni] if inside else -1
                if nb >= 0 and mesh.active[nb]:
                    patches.append((nb, _OPPOSITE[d], ni, nj, nk, -1.0))
                elif d == 4 and k0 == 0:
                    continue  # bed contact
                else:
                    patches.append((e, d, i0, j0, k0, 1.0))
        h = pr.convection_coefficient
        if patches and h > 0:
            p = np.array(patches)
            pe, pf = p[:, 0].astype(np.int64), p[:, 1].astype(np.int64)
            cell, sign = p[:, 2:5].astype(np.int64), p[:, 5]
            nodes, H, fv = patch_convection(mesh, pe, pf, cell, h, pr.ambient_temperature)
            rows, cols, (hv,) = block_triplets(mesh, nodes, [H * sign[:, None, None]])
            self._add(rows, cols, hv, None)
            fr, fvv = vector_triplets(mesh, nodes, fv * sign[:, None])
            np.add.at(self.f, fr, fvv)
        self._mark_active_dofs(els)

    def _add(self, rows, cols, kv, cv) -> None:
        if not self.window[rows].all():
            raise RuntimeError("activation touched dofs outside the current layer")
        pos = self.pattern.positions(rows, cols)
        np.add.at(self.k_data, pos, kv)
        av = kv
        if cv is not None:
            np.add.at(self.c_data, pos, cv)
            av = kv + cv / self.dt
        np.add.at(self.a_data, pos, av)


def len_bands(bands) -> int:
    return bands[-1].hi if bands else 0


def map_lattice(lattice: np.ndarray, mesh: HexMesh, t_ambient: float) -> np.ndarray:
    """Nodal temperatures of ``mesh`` from lattice values; fresh quiet nodes get T_a.

    Hanging nodes are re-evaluated from their masters.
    """
    T = lattice[mesh.node_lattice()]
    missing = np.isnan(T)
    if missing.any():
        act_nodes = np.zeros(mesh.n_nodes, bool)
        act_nodes[mesh.conn[mesh.active].ravel()] = True
        bad = missing & act_nodes
        if bad.any():
            raise RuntimeError(f"active node {int(np.flatnonzero(bad)[0])} has no value to map")
        T[missing] = t_ambient
    return mesh.expand(mesh.restrict(T))


def activate(run: DepositionRun, event: DepositionEvent) -> list:
    """Apply one deposition event to a run's current mesh; returns the locked dofs.

    Solving the step is left to the caller (see ``DepositionRun.advance``).
    """
    mesh = run.mesh
    polymer = [int(mesh.owner[k, j, i]) for k, j, i in event.activated_polymer_cells]
    run.activate_elements(polymer)
    air = [int(mesh.owner[k, j, i]) for k, j, i in event.co_activated_air_cells]
    if air:
        run.activate_elements(air)
    nodes = np.unique(mesh.conn[polymer])
    nodes = nodes[~mesh.dependent[nodes]]
    lock = mesh.node_dof[nodes, 0]
    return sorted(int(d) for d in lock[~run.bed[lock]])


def run_quiet(config: SimulationConfig, **kw) -> SimulationResult:
    return DepositionRun(config, "quiet", **kw).run()


def run_hybrid(config: SimulationConfig, **kw) -> SimulationResult:
    return DepositionRun(config, "hybrid", **kw).run()


def simulate(config: SimulationConfig, mode: str | None = None, **kw) -> SimulationResult:
    mode = mode or config.scenario.activation_mode
    if mode == "adaptive":
        from .coarsen import run_adaptive

        return run_adaptive(config, **kw)
    if mode not in ("quiet", "hybrid"):
        raise ValueError(f"unknown mode {mode!r}")
    return DepositionRun(config, mode, **kw).run()
