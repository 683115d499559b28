"""Element-level deposition path.

Cells live on a structured grid: ``i`` along x (element length), ``j`` along y
(filament width), one layer per layer height. Even layers are rastered along x,
odd layers along y, serpentine within the layer.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .config import ProcessParameters, ScenarioSpec

VOID, POLYMER, AIR = -1, 0, 1
MATERIAL_NAMES = {POLYMER: "polymer", AIR: "air"}


@dataclass(frozen=True)
class CellGrid:
    nx: int
    ny: int
    n_layers: int
    dx: float
    dy: float
    dz: float

    @classmethod
    def from_scenario(cls, spec: ScenarioSpec, process: ProcessParameters) -> "CellGrid":
        nx = max(1, round(spec.width / process.element_length))
        ny = max(1, round(spec.length / process.filament_width))
        return cls(nx, ny, spec.total_layers(process), process.element_length,
                   process.filament_width, process.layer_height)

    def cell_id(self, layer, j, i):
        return (np.asarray(layer) * self.ny + j) * self.nx + i


@dataclass(frozen=True)
class CellClassification:
    layer_index: int
    i: int
    j: int
    material: str


@dataclass
class DepositionEvent:
    step_index: int
    layer_index: int
    activated_polymer_cells: list
    co_activated_air_cells: list


def footprint(layer: int, spec: ScenarioSpec, grid: CellGrid) -> np.ndarray:
    """Boolean (ny, nx) mask of part cells in ``layer``."""
    mask = np.ones((grid.ny, grid.nx), bool)
    if spec.geometry_kind == "bridge":
        deck_layers = max(1, round(spec.bridge.deck_thickness / grid.dz))
        if layer < grid.n_layers - deck_layers:
            npx = max(1, round(spec.bridge.pillar_width / grid.dx))
            mask[:, npx:grid.nx - npx] = False
    return mask


def _perimeter(mask: np.ndarray, width: int) -> np.ndarray:
    ring = np.zeros_like(mask)
    inner = mask.copy()
    for _ in range(width):
        pad = np.pad(inner, 1, constant_values=False)
        keep = inner & pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
        ring |= inner & ~keep
        inner = keep
    return ring


def layer_materials(layer: int, spec: ScenarioSpec, grid: CellGrid) -> np.ndarray:
    """int8 (ny, nx) array of VOID / POLYMER / AIR for one layer."""
    if not 0 <= layer < grid.n_layers:
        raise IndexError(f"layer {layer} outside 0..{grid.n_layers - 1}")
    mask = footprint(layer, spec, grid)
    out = np.full(mask.shape, VOID, np.int8)
    if spec.infill_pattern == "dense":
        out[mask] = POLYMER
        return out
    ring = _perimeter(mask, spec.perimeter_cells)
    interior = mask & ~ring
    out[ring] = POLYMER
    out[interior] = AIR
    n_int = int(interior.sum())
    if n_int == 0:
        return out
    # interior density chosen so the whole layer (perimeter included) hits alpha
    target = spec.infill_density * mask.sum() - ring.sum()
    a = min(1.0, max(0.0, target / n_int))
    lines = interior if layer % 2 == 0 else interior.T  # rows along the raster
    line_idx = np.flatnonzero(lines.any(axis=1))
    for r, li in enumerate(line_idx):
        if math.ceil((r + 1) * a - 1e-12) > math.ceil(r * a - 1e-12):
            if layer % 2 == 0:
                out[li, interior[li]] = POLYMER
            else:
                out[interior[:, li], li] = POLYMER
    return out


def classify_layer(layer_index: int, spec: ScenarioSpec, grid: CellGrid) -> list[CellClassification]:
    mats = layer_materials(layer_index, spec, grid)
    jj, ii = np.nonzero(mats != VOID)
    return [CellClassification(layer_index, int(i), int(j), MATERIAL_NAMES[int(mats[j, i])])
            for j, i in zip(jj, ii)]


class DepositionSchedule:
    """Time-ordered activation events.

    ``step/layer/i/j`` hold one polymer cell per step; ``air_*`` hold the air
    cells with the step at which they are co-activated.
    """

    def __init__(self, grid: CellGrid, layer, i, j, air_step, air_layer, air_i, air_j,
                 materials: np.ndarray):
        self.grid = grid
        self.layer = np.asarray(layer, np.int64)
        self.i = np.asarray(i, np.int64)
        self.j = np.asarray(j, np.int64)
        self.air_step = np.asarray(air_step, np.int64)
        self.air_layer = np.asarray(air_layer, np.int64)
        self.air_i = np.asarray(air_i, np.int64)
        self.air_j = np.asarray(air_j, np.int64)
        self.materials = materials  # (n_layers, ny, nx)
        order = np.argsort(self.air_step, kind="stable")
        for name in ("air_step", "air_layer", "air_i", "air_j"):
            setattr(self, name, getattr(self, name)[order])
        self._air_ptr = np.searchsorted(self.air_step, np.arange(len(self.layer) + 1))

    def __len__(self):
        return len(self.layer)

    @property
    def n_steps(self) -> int:
        return len(self.layer)

    def air_cells(self, step: int):
        a, b = self._air_ptr[step], self._air_ptr[step + 1]
        return self.air_layer[a:b], self.air_j[a:b], self.air_i[a:b]

    def layer_steps(self, layer: int) -> tuple[int, int]:
        """Half-open range of steps that deposit ``layer``."""
        lo = int(np.searchsorted(self.layer, layer, "left"))
        hi = int(np.searchsorted(self.layer, layer, "right"))
        return lo, hi

    def event(self, step: int) -> DepositionEvent:
        al, aj, ai = self.air_cells(step)
        return DepositionEvent(
            step, int(self.layer[step]),
            [(int(self.layer[step]), int(self.j[step]), int(self.i[step]))],
            [(int(a), int(b), int(c)) for a, b, c in zip(al, aj, ai)])

    @property
    def events(self) -> list[DepositionEvent]:
        return [self.event(s) for s in range(len(self))]

    def print_time(self, dt: float) -> float:
        return len(self) * dt

    def polymer_fraction(self) -> float:
        part = self.materials != VOID
        return float((self.materials == POLYMER).sum() / part.sum())

    def to_csv(self, path) -> None:
        rows = [(s, int(self.layer[s]), int(self.i[s]), int(self.j[s]), "polymer")
                for s in range(len(self))]
        rows += [(int(s), int(l), int(i), int(j), "air") for s, l, i, j in
                 zip(self.air_step, self.air_layer, self.air_i, self.air_j)]
        rows.sort(key=lambda r: (r[0], r[4] != "polymer"))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "layer", "i", "j", "material"])
            w.writerows(rows)


def build_schedule(spec: ScenarioSpec, process: ProcessParameters,
                   grid: CellGrid | None = None) -> DepositionSchedule:
    grid = grid or CellGrid.from_scenario(spec, process)
    mats = np.stack([layer_materials(k, spec, grid) for k in range(grid.n_layers)])
    L, I, J = [], [], []
    AS, AL, AI, AJ = [], [], [], []
    step = 0
    for k in range(grid.n_layers):
        m = mats[k] if k % 2 == 0 else mats[k].T  # m[line, pos]
        pending = []  # air cells in lines already passed
        line_no = 0
        first_step = step
        for li in range(m.shape[0]):
            pos = np.flatnonzero(m[li] == POLYMER)
            air = np.flatnonzero(m[li] == AIR)
            pending.extend((li, p) for p in air)
            if len(pos) == 0:
                continue
            if line_no % 2 == 1:
                pos = pos[::-1]
            line_no += 1
            for p in pos:
                i, j = (p, li) if k % 2 == 0 else (li, p)
                L.append(k); I.append(i); J.append(j)
                step += 1
            for li_a, p_a in pending:  # completing this line releases earlier air
                i, j = (p_a, li_a) if k % 2 == 0 else (li_a, p_a)
                AS.append(step - 1); AL.append(k); AI.append(i); AJ.append(j)
            pending = []
        if step == first_step:
            if (m != VOID).any():
                raise ValueError(f"layer {k} has part cells but no polymer cells")
            continue
        for li_a, p_a in pending:
            i, j = (p_a, li_a) if k % 2 == 0 else (li_a, p_a)
            AS.append(step - 1); AL.append(k); AI.append(i); AJ.append(j)
    if step == 0:
        raise ValueError("geometry has no polymer cells")
    return DepositionSchedule(grid, L, I, J, AS, AL, AI, AJ, mats)
