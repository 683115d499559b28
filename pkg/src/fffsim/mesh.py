"""Structured multilevel hexahedral meshes.

A mesh is a stack of *bands*. Each band covers ``CF**level`` fine layers and
uses the per-axis segment layout of its level, so every coarse element is a box
of fine cells. Node positions are integer lattice points in fine-cell units,
which makes node matching between meshes exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .toolpath import AIR, POLYMER, VOID, CellGrid

MAT_POLYMER, MAT_AIR, MAT_HOMOGENIZED = 0, 1, 2

# local node -> lattice offset (i, j, k)
HEX_CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
# face direction d: axis = d // 2, side = d % 2 (0 = low, 1 = high)
FACE_NODES = np.array([np.flatnonzero(HEX_CORNERS[:, d // 2] == d % 2) for d in range(6)])

BED, PERMANENT, TEMPORARY = 0, 1, 2


# ------------------------------------------------------------------ layouts

def compute_level_layout(n_fine: int, cf: int, mlvl: int) -> list[list[int]]:
    """Per-level segment lengths (in fine elements) along one axis.

    Level k merges ``cf`` regular segments of level k-1. Leftovers at the
    max-index end join the last regular group as one uneven segment if it
    stays within ``1.5 * cf**k``; otherwise the uneven segment of the previous
    level is carried over unmerged.
    """
    if n_fine < 1 or cf < 2 or mlvl < 0:
        raise ValueError("need n_fine >= 1, cf >= 2, mlvl >= 0")
    levels = [[1] * n_fine]
    for k in range(1, mlvl + 1):
        prev = levels[-1]
        r, t = cf ** (k - 1), cf ** k
        n_reg = 0
        while n_reg < len(prev) and prev[n_reg] == r:
            n_reg += 1
        tail = prev[n_reg:]
        q, rem = divmod(n_reg, cf)
        groups = [t] * q
        leftover = [r] * rem
        if q and (leftover or tail) and t + sum(leftover) + sum(tail) <= 1.5 * t:
            groups[-1] += sum(leftover) + sum(tail)
            seg = groups
        elif q and leftover and t + sum(leftover) <= 1.5 * t:
            groups[-1] += sum(leftover)
            seg = groups + tail
        else:
            seg = groups + leftover + tail
        levels.append(seg)
    return levels


@dataclass(frozen=True)
class LevelLayout:
    level: int
    seg_x: tuple
    seg_y: tuple
    thickness: int  # fine layers

    @property
    def bx(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.seg_x)]).astype(np.int64)

    @property
    def by(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.seg_y)]).astype(np.int64)


def level_layouts(nx: int, ny: int, cf: int, mlvl: int) -> list[LevelLayout]:
    lx = compute_level_layout(nx, cf, mlvl)
    ly = compute_level_layout(ny, cf, mlvl)
    return [LevelLayout(k, tuple(lx[k]), tuple(ly[k]), cf ** k) for k in range(mlvl + 1)]


@dataclass(frozen=True)
class Band:
    lo: int
    hi: int
    level: int


def fine_bands(lo: int, hi: int) -> list[Band]:
    return [Band(k, k + 1, 0) for k in range(lo, hi)]


def check_bands(bands: list[Band], n_layers: int, cf: int) -> None:
    pos = 0
    for b in bands:
        if b.lo != pos:
            raise ValueError(f"band {b} leaves a gap or overlaps at layer {pos}")
        if b.hi - b.lo != cf ** b.level:
            raise ValueError(f"band {b} must span {cf ** b.level} layers")
        pos = b.hi
    if pos != n_layers:
        raise ValueError(f"bands cover {pos} layers, mesh has {n_layers}")


# ------------------------------------------------------------------ mesh

@dataclass
class ConstraintEquation:
    dependent: int
    masters: tuple
    weights: tuple


@dataclass
class FaceSets:
    """Boundary patches, one per fine-cell face on an element boundary."""

    element: np.ndarray
    face: np.ndarray
    cell: np.ndarray  # (P, 3) i, j, k of the cell on the element side
    kind: np.ndarray  # BED / PERMANENT / TEMPORARY

    def count(self, kind: int) -> int:
        return int((self.kind == kind).sum())

    def select(self, kind: int) -> "FaceSets":
        m = self.kind == kind
        return FaceSets(self.element[m], self.face[m], self.cell[m], self.kind[m])


@dataclass
class HexMesh:
    grid: CellGrid
    n_layers: int
    bands: list
    layouts: list
    box: np.ndarray  # (E, 6) i0, i1, j0, j1, k0, k1
    level: np.ndarray
    material: np.ndarray
    conductivity: np.ndarray
    capacity: np.ndarray  # rho * c_p, J/(m^3 K)
    active: np.ndarray
    conn: np.ndarray  # (E, 8)
    node_ijk: np.ndarray  # (N, 3)
    owner: np.ndarray  # (n_layers, ny, nx) element id per fine cell, -1 void
    dep: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    dep_masters: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))
    dep_weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    faces: FaceSets | None = None
    # inputs kept so variants of this mesh can be rebuilt
    cell_material: np.ndarray = None
    cell_active: np.ndarray = None
    props: tuple = None  # (polymer, air, coarse material)
    cf: int = 2

    # derived
    node_dof: np.ndarray = None  # (N, 4) dof ids
    node_w: np.ndarray = None  # (N, 4) weights
    dof_node: np.ndarray = None
    dependent: np.ndarray = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_ijk)

    @property
    def n_elements(self) -> int:
        return len(self.box)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_node)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([self.grid.dx, self.grid.dy, self.grid.dz])

    @property
    def coords(self) -> np.ndarray:
        return self.node_ijk * self.spacing

    def element_dims(self, e=None) -> np.ndarray:
        b = self.box if e is None else self.box[np.atleast_1d(e)]
        return (b[:, 1::2] - b[:, 0::2]) * self.spacing

    def volumes(self) -> np.ndarray:
        return np.prod(self.element_dims(), axis=1)

    @property
    def constraints(self) -> list[ConstraintEquation]:
        out = []
        for d, m, w in zip(self.dep, self.dep_masters, self.dep_weights):
            keep = w > 0
            out.append(ConstraintEquation(int(d), tuple(int(x) for x in m[keep]),
                                          tuple(float(x) for x in w[keep])))
        return out

    def lattice_index(self, ijk: np.ndarray) -> np.ndarray:
        g = self.grid
        ijk = np.asarray(ijk)
        return (ijk[..., 2] * (g.ny + 1) + ijk[..., 1]) * (g.nx + 1) + ijk[..., 0]

    def node_lattice(self) -> np.ndarray:
        return self.lattice_index(self.node_ijk)

    def is_dependent(self) -> np.ndarray:
        if self.dependent is not None:
            return self.dependent
        m = np.zeros(self.n_nodes, bool)
        m[self.dep] = True
        return m

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Nodal values from reduced dof values."""
        return (x[self.node_dof] * self.node_w).sum(axis=1)

    def restrict(self, t_nodes: np.ndarray) -> np.ndarray:
        return t_nodes[self.dof_node]

    def element_at(self, point) -> int:
        """Element containing ``point`` (m), or -1.

        Cells are half-open, so a point on a shared face belongs to the upper
        cell; points on the far faces of the part are clamped inwards.
        """
        g = self.grid
        idx = []
        for c, h, n in zip(point, (g.dx, g.dy, g.dz), (g.nx, g.ny, g.n_layers)):
            v = int(np.floor(c / h + 1e-9))
            idx.append(min(max(v, 0), n - 1))
        if idx[2] >= self.n_layers:
            return -1
        return int(self.owner[idx[2], idx[1], idx[0]])

    def interpolation_weights(self, e: int, point) -> np.ndarray:
        """Trilinear shape-function values of element ``e`` at ``point`` (m)."""
        lo = self.box[e, 0::2] * self.spacing
        ext = self.element_dims(e)[0]
        xi = np.clip((np.asarray(point, float) - lo) / ext, 0.0, 1.0)
        return np.where(HEX_CORNERS == 1, xi, 1 - xi).prod(axis=1)

    def report(self) -> str:
        lines = [f"nodes {self.n_nodes}  elements {self.n_elements}  "
                 f"dofs {self.n_dofs}  hanging {len(self.dep)}  layers {self.n_layers}"]
        for lv in sorted(set(self.level.tolist())):
            sel = self.level == lv
            nodes = np.unique(self.conn[sel])
            hang = np.isin(self.dep, nodes).sum()
            lines.append(f"  level {lv}: elements {int(sel.sum())}  nodes {len(nodes)}  "
                         f"constraints {int(hang)}")
        return "\n".join(lines)


def build_mesh(grid: CellGrid, materials: np.ndarray, bands: list[Band],
               layouts: list[LevelLayout], cell_active: np.ndarray | None = None,
               polymer=None, air=None, coarse_material=None, cf: int = 2) -> HexMesh:
    """Mesh the first ``bands[-1].hi`` layers of ``materials`` (n_layers, ny, nx).

    Fine elements take the per-cell material; coarse elements take
    ``coarse_material`` and are always active.
    """
    from .config import AIR as AIR_DEFAULT, PLA

    polymer = polymer or PLA
    air = air or AIR_DEFAULT
    coarse_material = coarse_material or polymer
    n_layers = bands[-1].hi if bands else 0
    check_bands(bands, n_layers, cf)
    if n_layers > materials.shape[0]:
        raise ValueError("bands extend above the scheduled geometry")
    mats = materials[:n_layers]
    part = mats != VOID
    if cell_active is None:
        cell_active = np.zeros(mats.shape, bool)
    cell_active = cell_active[:n_layers]

    boxes, levels, mat_ids, actives = [], [], [], []
    for b in bands:
        lay = layouts[b.level]
        if b.level == 0:
            jj, ii = np.nonzero(part[b.lo])
            bx = np.stack([ii, ii + 1, jj, jj + 1,
                           np.full_like(ii, b.lo), np.full_like(ii, b.hi)], axis=1)
            boxes.append(bx)
            levels.append(np.zeros(len(ii), np.int64))
            m = mats[b.lo, jj, ii]
            mat_ids.append(np.where(m == AIR, MAT_AIR, MAT_POLYMER))
            actives.append(cell_active[b.lo, jj, ii])
            continue
        bxs, bys = lay.bx, lay.by
        # part-cell count of every coarse box via 2D prefix sums
        cnt = part[b.lo:b.hi].sum(axis=0)
        ps = np.zeros((grid.ny + 1, grid.nx + 1), np.int64)
        ps[1:, 1:] = cnt.cumsum(0).cumsum(1)
        X0, Y0 = np.meshgrid(bxs[:-1], bys[:-1])
        X1, Y1 = np.meshgrid(bxs[1:], bys[1:])
        filled = ps[Y1, X1] - ps[Y0, X1] - ps[Y1, X0] + ps[Y0, X0]
        full = (X1 - X0) * (Y1 - Y0) * (b.hi - b.lo)
        if np.any((filled > 0) & (filled < full)):
            raise ValueError(f"band {b} would merge part and void cells")
        sel = filled == full
        n = int(sel.sum())
        boxes.append(np.stack([X0[sel], X1[sel], Y0[sel], Y1[sel],
                               np.full(n, b.lo), np.full(n, b.hi)], axis=1))
        levels.append(np.full(n, b.level, np.int64))
        mat_ids.append(np.full(n, MAT_HOMOGENIZED if coarse_material is not polymer
                               else MAT_POLYMER, np.int64))
        actives.append(np.ones(n, bool))

    box = np.concatenate(boxes).astype(np.int64) if boxes else np.zeros((0, 6), np.int64)
    level = np.concatenate(levels)
    material = np.concatenate(mat_ids).astype(np.int8)
    active = np.concatenate(actives).astype(bool)
    cond = np.empty(len(box))
    cap = np.empty(len(box))
    for mid, m in ((MAT_POLYMER, polymer), (MAT_AIR, air), (MAT_HOMOGENIZED, coarse_material)):
        s = material == mid
        cond[s] = m.conductivity
        cap[s] = m.volumetric_capacity

    # corner nodes on the integer lattice
    lo = box[:, 0::2]
    ext = box[:, 1::2] - lo
    corners = lo[:, None, :] + HEX_CORNERS[None] * ext[:, None, :]  # (E, 8, 3)
    gi = (corners[..., 2] * (grid.ny + 1) + corners[..., 1]) * (grid.nx + 1) + corners[..., 0]
    uniq, inv = np.unique(gi.ravel(), return_inverse=True)
    conn = inv.reshape(-1, 8)
    node_ijk = np.empty((len(uniq), 3), np.int64)
    node_ijk[:, 0] = uniq % (grid.nx + 1)
    node_ijk[:, 1] = (uniq // (grid.nx + 1)) % (grid.ny + 1)
    node_ijk[:, 2] = uniq // ((grid.nx + 1) * (grid.ny + 1))

    owner = np.full(mats.shape, -1, np.int64)
    fine = level == 0
    owner[box[fine, 4], box[fine, 2], box[fine, 0]] = np.flatnonzero(fine)
    for e in np.flatnonzero(~fine):
        i0, i1, j0, j1, k0, k1 = box[e]
        owner[k0:k1, j0:j1, i0:i1] = e

    mesh = HexMesh(grid, n_layers, list(bands), layouts, box, level, material, cond, cap,
                   active, conn, node_ijk, owner, cell_material=materials,
                   cell_active=cell_active.copy(), props=(polymer, air, coarse_material), cf=cf)
    _build_constraints(mesh, uniq)
    _build_dofmap(mesh)
    mesh.faces = classify_faces(mesh)
    return mesh


def _build_constraints(mesh: HexMesh, lattice: np.ndarray) -> None:
    grid = mesh.grid
    bands = mesh.bands
    deps, masters, weights = [], [], []

    def node_of(i, j, k):
        g = (k * (grid.ny + 1) + j) * (grid.nx + 1) + i
        pos = np.searchsorted(lattice, g)
        if np.any(pos >= len(lattice)) or np.any(lattice[np.minimum(pos, len(lattice) - 1)] != g):
            raise RuntimeError("constraint master is not a mesh node")
        return pos

    for below, above in zip(bands[:-1], bands[1:]):
        if below.level == above.level:
            continue
        k = below.hi
        on_plane = np.flatnonzero(mesh.node_ijk[:, 2] == k)
        coarse = below if below.level > above.level else above
        lay = mesh.layouts[coarse.level]
        bx, by = lay.bx, lay.by
        ii, jj = mesh.node_ijk[on_plane, 0], mesh.node_ijk[on_plane, 1]
        off = ~(np.isin(ii, bx) & np.isin(jj, by))
        if not off.any():
            continue
        ii, jj, nodes = ii[off], jj[off], on_plane[off]
        layer = coarse.lo
        sx = np.clip(np.searchsorted(bx, ii, "right") - 1, 0, len(bx) - 2)
        sy = np.clip(np.searchsorted(by, jj, "right") - 1, 0, len(by) - 2)
        ex = mesh.owner[layer, np.minimum(by[sy], grid.ny - 1), np.minimum(bx[sx], grid.nx - 1)]
        # point on a segment boundary next to a void element: use the left/lower neighbour
        for arr, b, sel_axis in ((sx, bx, ii), (sy, by, jj)):
            fix = (ex < 0) & np.isin(sel_axis, b) & (arr > 0)
            arr[fix] -= 1
            ex = mesh.owner[layer, np.minimum(by[sy], grid.ny - 1), np.minimum(bx[sx], grid.nx - 1)]
        ok = ex >= 0  # nodes not touching any coarse face are not hanging
        ii, jj, nodes, sx, sy = ii[ok], jj[ok], nodes[ok], sx[ok], sy[ok]
        x0, x1, y0, y1 = bx[sx], bx[sx + 1], by[sy], by[sy + 1]
        u = (ii - x0) / (x1 - x0)
        v = (jj - y0) / (y1 - y0)
        kk = np.full_like(ii, k)
        m = np.stack([node_of(x0, y0, kk), node_of(x1, y0, kk),
                      node_of(x1, y1, kk), node_of(x0, y1, kk)], axis=1)
        w = np.stack([(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v], axis=1)
        deps.append(nodes); masters.append(m); weights.append(w)

    if deps:
        mesh.dep = np.concatenate(deps)
        mesh.dep_masters = np.concatenate(masters)
        mesh.dep_weights = np.concatenate(weights)
        order = np.argsort(mesh.dep)
        mesh.dep, mesh.dep_masters, mesh.dep_weights = (
            mesh.dep[order], mesh.dep_masters[order], mesh.dep_weights[order])
        if len(np.unique(mesh.dep)) != len(mesh.dep):
            raise RuntimeError("a hanging node received two constraint equations")


def _build_dofmap(mesh: HexMesh) -> None:
    n = mesh.n_nodes
    dependent = mesh.is_dependent()
    dof_node = np.flatnonzero(~dependent)
    node_to_dof = np.full(n, -1, np.int64)
    node_to_dof[dof_node] = np.arange(len(dof_node))
    node_dof = np.repeat(node_to_dof[:, None], 4, axis=1)
    node_w = np.zeros((n, 4))
    node_w[:, 0] = 1.0
    if len(mesh.dep):
        md = node_to_dof[mesh.dep_masters]
        if np.any(md < 0):
            raise RuntimeError("constraint master is itself constrained")
        w = mesh.dep_weights.copy()
        # zero-weight slots point at a real master so index arrays stay valid
        first = np.argmax(w > 0, axis=1)
        pad = md[np.arange(len(md)), first]
        md = np.where(w > 0, md, pad[:, None])
        node_dof[mesh.dep] = md
        node_w[mesh.dep] = w
    mesh.node_dof = node_dof
    mesh.node_w = node_w
    mesh.dof_node = dof_node
    mesh.dependent = dependent


_DIRS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]])


def classify_faces(mesh: HexMesh) -> FaceSets:
    """Boundary patches of active elements.

    Bed: bottom faces at z = 0. Permanent: faces with no element across.
    Temporary: faces whose neighbour element is inactive.
    """
    owner = mesh.owner
    nl, ny, nx = owner.shape
    act_cell = np.zeros(owner.shape, bool)
    has = owner >= 0
    act_cell[has] = mesh.active[owner[has]]
    els, fcs, cells, kinds = [], [], [], []
    padded = np.pad(owner, 1, constant_values=-1)
    for d, (di, dj, dk) in enumerate(_DIRS):
        nb = padded[1 + dk:1 + dk + nl, 1 + dj:1 + dj + ny, 1 + di:1 + di + nx]
        boundary = act_cell & (nb != owner)
        nb_active = np.zeros_like(boundary)
        m = nb >= 0
        nb_active[m] = mesh.active[nb[m]]
        boundary &= ~nb_active
        kk, jj, ii = np.nonzero(boundary)
        if not len(kk):
            continue
        n = nb[kk, jj, ii]
        kind = np.where(n >= 0, TEMPORARY, PERMANENT)
        if d == 4:
            kind = np.where(kk == 0, BED, kind)
        els.append(owner[kk, jj, ii]); fcs.append(np.full(len(kk), d))
        cells.append(np.stack([ii, jj, kk], 1)); kinds.append(kind)
    if not els:
        z = np.zeros(0, np.int64)
        return FaceSets(z, z, np.zeros((0, 3), np.int64), z)
    return FaceSets(np.concatenate(els), np.concatenate(fcs), np.concatenate(cells),
                    np.concatenate(kinds))
