"""Trilinear hexahedral heat-conduction finite elements.

Unknowns are the independent nodes of a mesh ("dofs"). Hanging nodes are
eliminated by substituting their constraint equations into every element
matrix, so assembled matrices act on reduced dofs only. Dirichlet data is
handled at solve time through a lock mask rather than by changing the sparsity
pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import BED, FACE_NODES, HEX_CORNERS, HexMesh

_GP = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])


def _reference_matrices():
    """Unit-cube integrals of dN/dxi_a dN/dxi_a (a = x, y, z) and N N."""
    R = np.zeros((4, 8, 8))
    s = HEX_CORNERS
    for gx in _GP:
        for gy in _GP:
            for gz in _GP:
                g = np.array([gx, gy, gz])
                f = np.where(s == 1, g, 1 - g)  # (8, 3) 1D factors
                df = np.where(s == 1, 1.0, -1.0)
                N = f.prod(axis=1)
                grads = np.stack([df[:, 0] * f[:, 1] * f[:, 2],
                                  f[:, 0] * df[:, 1] * f[:, 2],
                                  f[:, 0] * f[:, 1] * df[:, 2]])
                w = 1 / 8
                for a in range(3):
                    R[a] += w * np.outer(grads[a], grads[a])
                R[3] += w * np.outer(N, N)
    return R


REF = _reference_matrices()


def _check_dims(dims):
    dims = np.asarray(dims, float)
    if dims.shape[-1] != 3 or np.any(~(dims > 0)):
        raise ValueError(f"degenerate element dimensions {dims}")
    return dims


def element_conductance(dims, conductivity: float) -> np.ndarray:
    """8x8 conduction matrix of a box element with edge lengths ``dims`` (m)."""
    ax, ay, az = _check_dims(dims)
    if conductivity < 0:
        raise ValueError("conductivity must be non-negative")
    return conductivity * (ay * az / ax * REF[0] + ax * az / ay * REF[1] + ax * ay / az * REF[2])


def element_capacitance(dims, density: float, specific_heat: float,
                        lumped: bool = False) -> np.ndarray:
    dims = _check_dims(dims)
    if density <= 0 or specific_heat <= 0:
        raise ValueError("density and specific heat must be positive")
    m = density * specific_heat * np.prod(dims) * REF[3]
    return np.diag(m.sum(axis=1)) if lumped else m


def _seg_integrals(u0, u1):
    """Integrals over [u0, u1] of phi_a phi_b and phi_a, phi_0 = 1 - u, phi_1 = u."""
    d1 = u1 - u0
    d2 = (u1 ** 2 - u0 ** 2) / 2
    d3 = (u1 ** 3 - u0 ** 3) / 3
    mm = np.empty(np.shape(u0) + (2, 2))
    mm[..., 0, 0] = d1 - 2 * d2 + d3
    mm[..., 1, 1] = d3
    mm[..., 0, 1] = mm[..., 1, 0] = d2 - d3
    vv = np.stack([d1 - d2, d2], axis=-1)
    return mm, vv


def face_convection(face_dims, h: float, t_ref: float, sub=None):
    """Bilinear face matrix H (4x4) and load h*T_ref*int(N) for a rectangular face.

    Node order is (0,0), (1,0), (1,1), (0,1) in face coordinates. ``sub`` is an
    optional ((u0, u1), (v0, v1)) parametric sub-rectangle to integrate over.
    """
    a, b = face_dims
    if not (a > 0 and b > 0):
        raise ValueError("degenerate face")
    (u0, u1), (v0, v1) = sub or ((0.0, 1.0), (0.0, 1.0))
    mu, vu = _seg_integrals(np.float64(u0), np.float64(u1))
    mv, vv = _seg_integrals(np.float64(v0), np.float64(v1))
    su = np.array([0, 1, 1, 0])
    sv = np.array([0, 0, 1, 1])
    H = h * a * b * mu[su[:, None], su[None, :]] * mv[sv[:, None], sv[None, :]]
    f = h * t_ref * a * b * vu[su] * vv[sv]
    return H, f


def patch_convection(mesh: HexMesh, element, face, cell, h: float, t_ref: float):
    """Convection on fine-cell patches of element faces, vectorized.

    Returns (nodes (P, 4), H (P, 4, 4), f (P, 4)). Each patch is integrated with
    the owning element's shape functions over the cell's sub-rectangle.
    """
    element = np.asarray(element)
    face = np.asarray(face)
    cell = np.asarray(cell).reshape(-1, 3)
    box = mesh.box[element]
    lo, hi = box[:, 0::2], box[:, 1::2]
    ext = (hi - lo) * mesh.spacing
    axis = face // 2
    tang = np.array([[1, 2], [0, 2], [0, 1]])[axis]  # (P, 2)
    P = len(element)
    rows = np.arange(P)
    mats = []
    vecs = []
    for t in range(2):
        ax_t = tang[:, t]
        n_t = hi[rows, ax_t] - lo[rows, ax_t]
        u0 = (cell[rows, ax_t] - lo[rows, ax_t]) / n_t
        m, v = _seg_integrals(u0, u0 + 1.0 / n_t)
        mats.append(m)
        vecs.append(v)
    area = ext[rows, tang[:, 0]] * ext[rows, tang[:, 1]]
    fn = FACE_NODES[face]  # (P, 4) local node ids
    s0 = HEX_CORNERS[fn, tang[:, :1]]  # (P, 4) coordinate along first tangent
    s1 = HEX_CORNERS[fn, tang[:, 1:]]
    Hm = (mats[0][rows[:, None, None], s0[:, :, None], s0[:, None, :]]
          * mats[1][rows[:, None, None], s1[:, :, None], s1[:, None, :]])
    fv = vecs[0][rows[:, None], s0] * vecs[1][rows[:, None], s1]
    scale = h * area
    return (mesh.conn[element[:, None], fn], Hm * scale[:, None, None],
            fv * (scale * t_ref)[:, None])


# ------------------------------------------------------------- scattering

def block_triplets(mesh: HexMesh, nodes: np.ndarray, mats: list):
    """Expand node-block matrices (B, n, n) to reduced-dof triplets.

    Blocks touching a hanging node are multiplied out with their constraint
    weights (P^T M P); all others map nodes to dofs one to one.
    """
    nodes = np.atleast_2d(nodes)
    n = nodes.shape[1]
    dep = mesh.is_dependent()
    hang = dep[nodes].any(axis=1)
    rows, cols, vals = [], [], [[] for _ in mats]
    if (~hang).any():
        d = mesh.node_dof[nodes[~hang], 0]
        rows.append(np.broadcast_to(d[:, :, None], d.shape + (n,)).ravel())
        cols.append(np.broadcast_to(d[:, None, :], d.shape[:1] + (n, n)).ravel())
        for v, M in zip(vals, mats):
            v.append(M[~hang].ravel())
    if hang.any():
        D = mesh.node_dof[nodes[hang]]
        W = mesh.node_w[nodes[hang]]
        shp = (len(D), n, 4, n, 4)
        rows.append(np.broadcast_to(D[:, :, :, None, None], shp).ravel())
        cols.append(np.broadcast_to(D[:, None, None, :, :], shp).ravel())
        ww = W[:, :, :, None, None] * W[:, None, None, :, :]
        for v, M in zip(vals, mats):
            v.append((M[hang][:, :, None, :, None] * ww).ravel())
    cat = lambda a: np.concatenate(a) if a else np.zeros(0)
    return cat(rows).astype(np.int64), cat(cols).astype(np.int64), [cat(v) for v in vals]


def vector_triplets(mesh: HexMesh, nodes: np.ndarray, vecs: np.ndarray):
    nodes = np.atleast_2d(nodes)
    D = mesh.node_dof[nodes]
    W = mesh.node_w[nodes]
    return D.ravel(), (np.asarray(vecs).reshape(nodes.shape)[..., None] * W).ravel()


class SparsePattern:
    """CSR pattern over reduced dofs built from unique (row, col) keys."""

    def __init__(self, n: int, rows: np.ndarray, cols: np.ndarray):
        self.n = n
        keys = rows * n + cols
        self.keys, self._inv = np.unique(keys, return_inverse=True)
        r = self.keys // n
        self.indices = (self.keys % n).astype(np.int64)
        self.indptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(r, minlength=n), out=self.indptr[1:])

    @property
    def nnz(self) -> int:
        return len(self.keys)

    def gather(self, vals: np.ndarray) -> np.ndarray:
        """Sum values given in the order of the construction triplets."""
        return np.bincount(self._inv, weights=vals, minlength=self.nnz)

    def positions(self, rows, cols) -> np.ndarray:
        keys = np.asarray(rows) * self.n + np.asarray(cols)
        pos = np.searchsorted(self.keys, keys)
        if len(pos) and (pos.max() >= self.nnz or np.any(self.keys[pos] != keys)):
            raise KeyError("entry outside the sparsity pattern")
        return pos

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def diagonal_positions(self) -> np.ndarray:
        return self.positions(np.arange(self.n), np.arange(self.n))


# ------------------------------------------------------------- assembly

@dataclass
class SystemMatrices:
    """C, K (conduction plus convection) and f on the reduced dofs of ``mesh``."""

    mesh: HexMesh
    pattern: SparsePattern
    c_data: np.ndarray
    k_data: np.ndarray
    f: np.ndarray
    bed_dofs: np.ndarray

    # the csr views share c_data / k_data, so in-place updates show through
    @cached_property
    def C(self) -> sp.csr_matrix:
        return self.pattern.matrix(self.c_data)

    @cached_property
    def K(self) -> sp.csr_matrix:
        return self.pattern.matrix(self.k_data)

    @property
    def n_dofs(self) -> int:
        return self.pattern.n


def element_scales(mesh: HexMesh, quiet_scale: float) -> np.ndarray:
    return np.where(mesh.active, 1.0, quiet_scale)


def element_matrices(mesh: HexMesh, elements=None, lumped: bool = False):
    """Unscaled (K_e, C_e) stacks for the given elements."""
    el = np.arange(mesh.n_elements) if elements is None else np.atleast_1d(elements)
    d = mesh.element_dims(el)
    ax, ay, az = d[:, 0], d[:, 1], d[:, 2]
    k = mesh.conductivity[el]
    K = (k * ay * az / ax)[:, None, None] * REF[0] + (k * ax * az / ay)[:, None, None] * REF[1] \
        + (k * ax * ay / az)[:, None, None] * REF[2]
    C = (mesh.capacity[el] * ax * ay * az)[:, None, None] * REF[3]
    if lumped:
        diag = C.sum(axis=2)
        C = np.zeros_like(C)
        C[:, np.arange(8), np.arange(8)] = diag
    return K, C


def bed_dofs(mesh: HexMesh) -> np.ndarray:
    nodes = np.flatnonzero(mesh.node_ijk[:, 2] == 0)
    return np.unique(mesh.node_dof[nodes, 0])


def assemble(mesh: HexMesh, h: float, t_ambient: float, quiet_scale: float = 1e-9,
             lumped: bool = False) -> SystemMatrices:
    """Assemble C, K + H and the convection load for the current activity flags."""
    if mesh.n_dofs == 0:
        raise ValueError("mesh has no degrees of freedom")
    K, C = element_matrices(mesh, lumped=lumped)
    s = element_scales(mesh, quiet_scale)
    K *= s[:, None, None]
    C *= s[:, None, None]
    rows, cols, (kv, cv) = block_triplets(mesh, mesh.conn, [K, C])
    # every element couples all of its dofs, so the pattern never changes on activation
    pattern = SparsePattern(mesh.n_dofs, rows, cols)
    k_data = pattern.gather(kv)
    c_data = pattern.gather(cv)
    f = np.zeros(mesh.n_dofs)
    conv = mesh.faces.kind != BED
    if conv.any() and h > 0:
        fs = mesh.faces
        nodes, H, fv = patch_convection(mesh, fs.element[conv], fs.face[conv], fs.cell[conv],
                                        h, t_ambient)
        r, c, (hv,) = block_triplets(mesh, nodes, [H])
        np.add.at(k_data, pattern.positions(r, c), hv)
        fr, fvv = vector_triplets(mesh, nodes, fv)
        f += np.bincount(fr, weights=fvv, minlength=mesh.n_dofs)
    return SystemMatrices(mesh, pattern, c_data, k_data, f, bed_dofs(mesh))


# ------------------------------------------------------------- time stepping

@dataclass
class ThermalState:
    """Nodal temperatures, clock and the Dirichlet locks active for one step."""

    T: np.ndarray
    t: float = 0.0
    locked: dict = field(default_factory=dict)  # node id -> value


def initial_state(mesh: HexMesh, t_ambient: float, t_bed: float) -> ThermalState:
    T = np.full(mesh.n_nodes, float(t_ambient))
    bed = np.flatnonzero(mesh.node_ijk[:, 2] == 0)
    T[bed] = t_bed
    return ThermalState(T, 0.0, {int(n): float(t_bed) for n in bed})


def _lock_arrays(mesh: HexMesh, locked: dict):
    dep = mesh.is_dependent()
    nodes = np.array([n for n in locked if not dep[n]], np.int64)
    vals = np.array([locked[int(n)] for n in nodes])
    return (mesh.node_dof[nodes, 0] if len(nodes) else np.zeros(0, np.int64)), vals


def solve_locked(A: sp.spmatrix, b: np.ndarray, x: np.ndarray, locked_dofs: np.ndarray):
    """Direct solve of A x = b with x fixed on ``locked_dofs``."""
    from scipy.sparse.linalg import spsolve

    if not len(locked_dofs):
        return spsolve(A.tocsc(), b)
    n = A.shape[0]
    free = np.ones(n, bool)
    free[locked_dofs] = False
    x = x.copy()
    if free.any():
        A = A.tocsr()
        rhs = b[free] - A[free][:, ~free] @ x[~free]
        x[free] = spsolve(A[free][:, free].tocsc(), rhs)
    return x


def step(system: SystemMatrices, state: ThermalState, dt: float) -> ThermalState:
    """One backward-Euler step: (C/dt + K) T_new = C/dt T_old + f on free dofs."""
    if not dt > 0:
        raise ValueError("time step must be positive")
    mesh = system.mesh
    x_old = mesh.restrict(state.T)
    ldofs, lvals = _lock_arrays(mesh, state.locked)
    x = x_old.copy()
    x[ldofs] = lvals
    A = system.C / dt + system.K
    b = system.C @ x_old / dt + system.f
    x = solve_locked(A, b, x, ldofs)
    return ThermalState(mesh.expand(x), state.t + dt, dict(state.locked))


def solve_steady(system: SystemMatrices, state: ThermalState) -> ThermalState:
    mesh = system.mesh
    ldofs, lvals = _lock_arrays(mesh, state.locked)
    x = mesh.restrict(state.T)
    x[ldofs] = lvals
    x = solve_locked(system.K, system.f, x, ldofs)
    return ThermalState(mesh.expand(x), state.t, dict(state.locked))


def heat_flux(mesh: HexMesh, state: ThermalState, elements=None) -> np.ndarray:
    """q = -k grad T at element centroids, (E, 3) in W/m^2."""
    el = np.arange(mesh.n_elements) if elements is None else np.atleast_1d(elements)
    T = state.T[mesh.conn[el]]  # (E, 8)
    d = mesh.element_dims(el)
    sgn = np.where(HEX_CORNERS == 1, 1.0, -1.0)  # dN/dxi at the centre = sgn / 4
    grad = (T[:, :, None] * sgn[None] / 4).sum(axis=1) / d
    return -mesh.conductivity[el][:, None] * grad
