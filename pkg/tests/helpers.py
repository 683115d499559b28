"""Small scenario builders shared by the tests."""
from __future__ import annotations

import numpy as np

from fffsim.config import MM, SimulationConfig
from fffsim.mesh import Band, build_mesh, fine_bands, level_layouts
from fffsim.toolpath import CellGrid, POLYMER


def block_config(nx=4, ny=4, layers=4, **overrides) -> SimulationConfig:
    """Dense block of nx x ny x layers default-size cells."""
    kw = {"scenario.width": nx * 0.5 * MM, "scenario.length": ny * 0.5 * MM,
          "scenario.height": layers * 0.2 * MM}
    kw.update(overrides)
    return SimulationConfig().replace(**kw)


def grid(nx, ny, nl, dx=1.0, dy=1.0, dz=1.0) -> CellGrid:
    return CellGrid(nx, ny, nl, dx, dy, dz)


def dense_mesh(nx, ny, nl, bands=None, cf=2, mlvl=3, active=True, spacing=(1.0, 1.0, 1.0)):
    g = grid(nx, ny, nl, *spacing)
    mats = np.full((nl, ny, nx), POLYMER, np.int8)
    bands = bands if bands is not None else fine_bands(0, nl)
    act = np.full(mats.shape, bool(active))
    return build_mesh(g, mats, bands, level_layouts(nx, ny, cf, mlvl), act, cf=cf)


__all__ = ["Band", "block_config", "dense_mesh", "grid"]
