"""Probe sampling, field export, run records and run comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import HexMesh


def sample_probe(mesh: HexMesh, T: np.ndarray, location) -> float | None:
    """Trilinear value at ``location`` (m) from nodal temperatures ``T``.

    Returns None when the containing element is missing or not active yet.
    """
    e = mesh.element_at(location)
    if e < 0 or not mesh.active[e]:
        return None
    return float(T[mesh.conn[e]] @ mesh.interpolation_weights(e, location))


def export_field(mesh: HexMesh, T: np.ndarray, path) -> None:
    """Legacy ASCII VTK unstructured grid with temperature and cell fields."""
    xyz = mesh.coords
    lines = ["# vtk DataFile Version 3.0", "fffsim temperature field", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in xyz]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {9 * ne}")
    lines += ["8 " + " ".join(map(str, c)) for c in mesh.conn]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["12"] * ne
    lines += [f"POINT_DATA {mesh.n_nodes}", "SCALARS temperature_C double 1",
              "LOOKUP_TABLE default"]
    lines += [f"{t:.12g}" for t in T]
    lines.append(f"CELL_DATA {ne}")
    for name, arr in (("material", mesh.material), ("level", mesh.level),
                      ("active", mesh.active.astype(int))):
        lines += [f"SCALARS {name} int 1", "LOOKUP_TABLE default"]
        lines += [str(int(v)) for v in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def field_writer(directory):
    """``field_sink`` callback writing ``<name>.vtk`` files into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)

    def sink(name, mesh, T):
        export_field(mesh, T, out / f"{name}.vtk")
    return sink


def write_probes(probes, directory) -> list[Path]:
    """One ``probe_<i>.csv`` per probe with columns ``t_s,T_C``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, p in enumerate(probes):
        path = out / f"probe_{i}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "T_C"])
            for t, v in zip(p.times, p.temps):
                w.writerow([repr(float(t)), repr(float(v))])
        paths.append(path)
    return paths


@dataclass
class RunRecord:
    """What ``compare`` needs from a run, in memory or read back from disk."""

    probes: list  # (times, temps) per probe
    time: np.ndarray
    total_dofs: np.ndarray
    wall_time: float
    locations: list = field(default_factory=list)

    @classmethod
    def from_result(cls, result) -> "RunRecord":
        m = result.metrics
        return cls([p.arrays() for p in result.probes], m.time.copy(), m.total_dofs.copy(),
                   m.wall_time, [p.location for p in result.probes])

    @classmethod
    def load(cls, directory) -> "RunRecord":
        d = Path(directory)
        mpath = d / "metrics.csv"
        if not mpath.is_file():
            raise FileNotFoundError(f"{mpath} not found")
        time, dofs, wall = [], [], None
        with open(mpath, newline="") as fh:
            rows = csv.reader(fh)
            next(rows)
            for row in rows:
                if not row:
                    continue
                if row[0] == "wall_time_s":
                    wall = float(row[1])
                else:
                    time.append(float(row[1]))
                    dofs.append(int(row[3]))
        probes = []
        i = 0
        while (d / f"probe_{i}.csv").is_file():
            data = np.loadtxt(d / f"probe_{i}.csv", delimiter=",", skiprows=1, ndmin=2)
            probes.append((data[:, 0], data[:, 1]))
            i += 1
        return cls(probes, np.array(time), np.array(dofs, np.int64), wall or 0.0)


@dataclass
class ProbeDeviation:
    probe: int
    n_common: int
    max_abs: float
    mean_abs: float
    max_rel: float
    mean_rel: float
    max_rel_after_peak: float


@dataclass
class ComparisonReport:
    probes: list
    wall_ratio: float  # t(B) / t(A)
    dof_time: np.ndarray
    dofs_a: np.ndarray
    dofs_b: np.ndarray

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["probe", "n_common", "max_abs_C", "mean_abs_C", "max_rel",
                        "mean_rel", "max_rel_after_peak"])
            for d in self.probes:
                w.writerow([d.probe, d.n_common, f"{d.max_abs:.6e}", f"{d.mean_abs:.6e}",
                            f"{d.max_rel:.6e}", f"{d.mean_rel:.6e}",
                            f"{d.max_rel_after_peak:.6e}"])
            w.writerow([])
            w.writerow(["wall_time_ratio_b_over_a", f"{self.wall_ratio:.6f}"])

    def write_dofs(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "dofs_a", "dofs_b"])
            for t, a, b in zip(self.dof_time, self.dofs_a, self.dofs_b):
                w.writerow([repr(float(t)), int(a), int(b)])


def _as_record(run) -> RunRecord:
    return run if isinstance(run, RunRecord) else RunRecord.from_result(run)


def probe_deviation(ta, Ta, tb, Tb, index: int = 0) -> ProbeDeviation:
    """Deviations of B from A over common sample times.

    Relative values are taken against A. "After peak" starts at A's first
    maximum, i.e. once the deposition peak has passed.
    """
    ka = np.round(np.asarray(ta) * 1e9).astype(np.int64)
    kb = np.round(np.asarray(tb) * 1e9).astype(np.int64)
    _, ia, ib = np.intersect1d(ka, kb, return_indices=True)
    if not len(ia):
        return ProbeDeviation(index, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    a, b = np.asarray(Ta)[ia], np.asarray(Tb)[ib]
    diff = np.abs(b - a)
    rel = diff / np.maximum(np.abs(a), 1e-300)
    pk = int(np.argmax(a))
    return ProbeDeviation(index, len(ia), float(diff.max()), float(diff.mean()),
                          float(rel.max()), float(rel.mean()), float(rel[pk:].max()))


def compare_runs(a, b) -> ComparisonReport:
    """Probe deviations of run ``b`` from run ``a`` and their wall-time ratio."""
    a, b = _as_record(a), _as_record(b)
    if len(a.probes) != len(b.probes):
        raise ValueError(f"runs have {len(a.probes)} and {len(b.probes)} probes")
    if len(a.time) != len(b.time) or not np.allclose(a.time, b.time, rtol=0, atol=1e-9):
        raise ValueError("runs do not share a time line (different scenarios?)")
    devs = [probe_deviation(ta, Ta, tb, Tb, i)
            for i, ((ta, Ta), (tb, Tb)) in enumerate(zip(a.probes, b.probes))]
    ratio = b.wall_time / a.wall_time if a.wall_time > 0 else float("nan")
    return ComparisonReport(devs, ratio, a.time, a.total_dofs, b.total_dofs)
