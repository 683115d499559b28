"""Error-driven layer coarsening for the adaptive mode.

At the end of every remeshing step, a group of ``CF`` bands of equal level is
merged into one band of the next level when trilinear interpolation from the
coarse corners reproduces the current temperature, to within a relative
threshold, at every node that would disappear (or become hanging).

Candidates are visited in passes. Each pass takes the lowest group of every
level in ascending level order; passes repeat while they merge something, and
the scan ends at the first rejection.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .activation import DepositionRun, SimulationResult, map_lattice
from .femcore import ThermalState
from .homog import assign_homogenized
from .mesh import HEX_CORNERS, Band, HexMesh, build_mesh
from .config import SimulationConfig
from .toolpath import VOID


@dataclass
class CoarseningDecision:
    step: int
    band_lo: int
    band_hi: int
    level: int
    accepted: bool
    worst_error: float
    worst_node: int  # lattice index of the worst node, -1 if none was checked
    n_checked: int = 0

    @property
    def verdict(self) -> str:
        return "accept" if self.accepted else "reject"

    @property
    def key(self) -> tuple:
        return (self.step, self.band_lo, self.band_hi, self.level)


def interpolate_coarse(corners, xi) -> np.ndarray:
    """Trilinear value from 8 corner values at local coordinates in [-1, 1]^3.

    ``xi`` may be (3,) or (P, 3); ``corners`` (8,) or (P, 8).
    """
    corners = np.asarray(corners, float)
    xi = np.asarray(xi, float)
    sign = 2 * HEX_CORNERS - 1
    n = np.prod(1 + sign * xi[..., None, :], axis=-1) / 8
    return (n * corners).sum(axis=-1)


def merge_group(bands: list[Band], p: int, cf: int) -> list[Band]:
    """Bands with ``bands[p:p+cf]`` replaced by one band of the next level."""
    grp = bands[p:p + cf]
    return bands[:p] + [Band(grp[0].lo, grp[-1].hi, grp[0].level + 1)] + bands[p + cf:]


def candidate_groups(bands: list[Band], cf: int, mlvl: int):
    """Start indices of mergeable band groups, lowest first."""
    p = 0
    while p + cf <= len(bands):
        b = bands[p]
        k = b.level
        grp = bands[p:p + cf]
        if (k < mlvl and b.lo % cf ** (k + 1) == 0
                and all(g.level == k for g in grp)):
            yield p
            p += cf
        else:
            p += 1


def _group_index(bands: list[Band], band: Band, cf: int) -> int:
    k = band.level - 1
    if k < 0 or band.hi - band.lo != cf ** band.level or band.lo % cf ** band.level:
        raise ValueError(f"band {band} is not aligned with its level")
    for p, b in enumerate(bands):
        if b.lo == band.lo:
            grp = bands[p:p + cf]
            if (len(grp) == cf and all(g.level == k for g in grp) and grp[-1].hi == band.hi):
                return p
            break
    raise ValueError(f"band {band} does not match {cf} complete level-{k} bands")


def build_potential_mesh(current: HexMesh, band: Band, alpha: float | None = None) -> HexMesh:
    """``current`` with the layers of ``band`` merged into level ``band.level``.

    Raises ValueError when the band is misaligned or would merge part and void.
    """
    p = _group_index(current.bands, band, current.cf)
    bands = merge_group(current.bands, p, current.cf)
    pol, air, coarse = current.props
    mesh = build_mesh(current.grid, current.cell_material, bands, current.layouts,
                      current.cell_active, pol, air, coarse, current.cf)
    if alpha is not None:
        new = np.flatnonzero((mesh.level == band.level) & (mesh.box[:, 4] == band.lo))
        assign_homogenized(mesh, new, alpha, air, pol)
    return mesh


def _lookup(mesh: HexMesh, lattice: np.ndarray) -> np.ndarray:
    """Node ids of ``mesh`` at lattice indices, -1 where absent."""
    nl = mesh.node_lattice()
    pos = np.searchsorted(nl, lattice)
    pos = np.minimum(pos, len(nl) - 1)
    return np.where(nl[pos] == lattice, pos, -1)


def check_layer(current: HexMesh, T: np.ndarray, potential: HexMesh, band: Band,
                eps: float, floor: float = 1.0, step: int = -1,
                offset: float = 0.0) -> CoarseningDecision:
    """Relative interpolation-error test for merging ``band``.

    ``T`` holds the nodal temperatures of ``current`` in °C. Checked are the
    independent nodes of ``current`` on the band's planes that are absent from
    or constrained in ``potential``. The error of node j is
    ``|T_j - T^_j| / max(|T_j + offset|, floor)``; ``offset=273.15`` measures it
    against absolute temperature.
    """
    ijk = current.node_ijk
    z = ijk[:, 2]
    cand = np.flatnonzero((z >= band.lo) & (z <= band.hi) & ~current.dependent)
    pn = _lookup(potential, current.node_lattice()[cand])
    gone = pn < 0
    gone[~gone] = potential.dependent[pn[~gone]]
    nodes = cand[gone]
    if not len(nodes):
        # nothing to compare; eps = 0 still never accepts
        return CoarseningDecision(step, band.lo, band.hi, band.level, eps > 0, 0.0, -1, 0)
    g = current.grid
    ii, jj, kk = ijk[nodes, 0], ijk[nodes, 1], ijk[nodes, 2]
    kc = np.clip(kk, band.lo, band.hi - 1)
    owner = potential.owner
    elem = np.full(len(nodes), -1, np.int64)
    for di in (0, 1):
        for dj in (0, 1):
            ci = np.clip(ii - di, 0, g.nx - 1)
            cj = np.clip(jj - dj, 0, g.ny - 1)
            e = owner[kc, cj, ci]
            ok = (elem < 0) & (e >= 0)
            elem[ok] = e[ok]
    if np.any(elem < 0):
        raise RuntimeError("checked node has no enclosing coarse element")
    box = potential.box[elem]
    lo = box[:, 0::2]
    ext = box[:, 1::2] - lo
    corners = lo[:, None, :] + HEX_CORNERS[None] * ext[:, None, :]
    cn = _lookup(current, current.lattice_index(corners))
    if np.any(cn < 0):
        raise RuntimeError("coarse corner is not a node of the current mesh")
    xi = 2.0 * (ijk[nodes] - lo) / ext - 1.0
    t_hat = interpolate_coarse(T[cn], xi)
    tj = T[nodes]
    err = np.abs(tj - t_hat) / np.maximum(np.abs(tj + offset), floor)
    w = int(np.argmax(err))
    worst = float(err[w])
    return CoarseningDecision(step, band.lo, band.hi, band.level, bool(np.all(err < eps)),
                              worst, int(current.node_lattice()[nodes[w]]), len(nodes))


def map_solution(old: HexMesh, T_old: np.ndarray, new: HexMesh, t_ambient: float,
                 t: float = 0.0) -> ThermalState:
    """Initial state on ``new`` from nodal values on ``old``.

    Coinciding lattice nodes copy their value; nodes of quiet layers get the
    ambient temperature; hanging nodes follow their masters.
    """
    g = new.grid
    if (old.grid.nx, old.grid.ny) != (g.nx, g.ny) or old.grid.n_layers > g.n_layers:
        raise ValueError("meshes do not share a lattice")
    lattice = np.full((g.n_layers + 1) * (g.ny + 1) * (g.nx + 1), np.nan)
    lattice[old.node_lattice()] = T_old
    return ThermalState(map_lattice(lattice, new, t_ambient), t, {})


def lowest_group(bands: list[Band], level: int, cf: int, skip=()) -> int | None:
    """Index of the lowest aligned group of ``cf`` bands at ``level``."""
    for p in candidate_groups(bands, cf, level + 1):
        if bands[p].level == level and bands[p].lo not in skip:
            return p
    return None


def coarsen_bands(mesh: HexMesh, T: np.ndarray, eps: float, floor: float, mlvl: int,
                  step: int = -1, alpha: float | None = None, t_ambient: float = 25.0,
                  offset: float = 0.0):
    """Run the candidate scan on a solved state.

    Returns (final mesh, nodal temperatures on it, decisions).
    """
    decisions = []
    cf = mesh.cf
    skip = {k: set() for k in range(mlvl)}  # groups whose layout cannot merge
    while True:
        merged = False
        for k in range(mlvl):
            while True:
                p = lowest_group(mesh.bands, k, cf, skip[k])
                if p is None:
                    break
                band = Band(mesh.bands[p].lo, mesh.bands[p + cf - 1].hi, k + 1)
                try:
                    pot = build_potential_mesh(mesh, band, alpha)
                    break
                except ValueError:
                    skip[k].add(band.lo)
            if p is None:
                continue
            dec = check_layer(mesh, T, pot, band, eps, floor, step, offset)
            decisions.append(dec)
            if not dec.accepted:
                return mesh, T, decisions
            T = map_solution(mesh, T, pot, t_ambient).T
            mesh = pot
            merged = True
        if not merged:
            return mesh, T, decisions


class AdaptiveController:
    """Called by the run at the end of every remeshing step."""

    def __init__(self, config: SimulationConfig):
        self.cfg = config

    def __call__(self, run: DepositionRun, idx: int) -> None:
        cp = self.cfg.coarsening
        mesh = run.mesh
        T = mesh.expand(run.x)
        alpha = run.alpha
        _, _, decisions = coarsen_bands(mesh, T, cp.epsilon, cp.denominator_floor,
                                        cp.max_levels, idx, alpha,
                                        self.cfg.process.ambient_temperature, cp.error_offset)
        run.decisions.extend(decisions)
        bands = list(run.bands)
        for d in decisions:
            if d.accepted:
                p = _group_index(bands, Band(d.band_lo, d.band_hi, d.level), run.cf)
                bands = merge_group(bands, p, run.cf)
                run.metrics.coarsening_events.append(
                    {"step": run.step_no, "band_lo": d.band_lo, "band_hi": d.band_hi,
                     "level": d.level})
        run.bands = bands


def run_adaptive(config: SimulationConfig, **kw) -> SimulationResult:
    kw.setdefault("controller", AdaptiveController(config))
    return DepositionRun(config, "adaptive", **kw).run()


def built_mesh(run_or_result, bands: list[Band]) -> HexMesh:
    """Mesh of ``bands`` with every part cell below the top active."""
    cfg = run_or_result.config if isinstance(run_or_result, SimulationResult) else run_or_result.cfg
    from .toolpath import build_schedule
    from .homog import effective_material
    from .mesh import level_layouts

    sched = build_schedule(cfg.scenario, cfg.process)
    cp = cfg.coarsening
    layouts = level_layouts(sched.grid.nx, sched.grid.ny, cp.factor, cp.max_levels)
    coarse = effective_material(sched.polymer_fraction(), cfg.air, cfg.polymer)
    return build_mesh(sched.grid, sched.materials, bands, layouts, sched.materials != VOID,
                      cfg.polymer, cfg.air, coarse, cp.factor)


def replay_decisions(result: SimulationResult, eps: float) -> set:
    """Accepted (step, lo, hi, level) keys when the recorded states are re-checked with ``eps``."""
    cfg = result.config
    cp = cfg.coarsening
    accepted = set()
    for idx, bands, lattice in result.recorded:
        top = bands[-1].hi
        if top >= cfg.total_layers:
            continue
        mesh = built_mesh(result, bands)
        T = map_lattice(lattice, mesh, cfg.process.ambient_temperature)
        _, _, decs = coarsen_bands(mesh, T, eps, cp.denominator_floor, cp.max_levels, idx,
                                   None, cfg.process.ambient_temperature, cp.error_offset)
        accepted |= {d.key for d in decs if d.accepted}
    return accepted


def write_decision_log(decisions, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "band_lo", "band_hi", "level", "verdict", "worst_err", "worst_node"])
        for d in decisions:
            w.writerow([d.step, d.band_lo, d.band_hi, d.level, d.verdict,
                        f"{d.worst_error:.6e}", d.worst_node])
