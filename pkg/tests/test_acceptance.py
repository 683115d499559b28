"""Acceptance criteria, one test (or parametrized group) per criterion.

The desk-block tests run the 28 x 28 x 80 element block in all three modes
and the 50% infill block in two; together they take close to an hour.
Deselect them with ``-m "not slow"``.
"""
import time
from pathlib import Path

import numpy as np
import pytest

import test_properties as props
from helpers import Band, block_config, dense_mesh, grid
from fffsim.activation import simulate
from fffsim.coarsen import replay_decisions
from fffsim.config import AIR, PLA, load_config
from fffsim.femcore import ThermalState, assemble, initial_state, solve_steady, step
from fffsim.homog import effective_material
from fffsim.io import compare_runs
from fffsim.mesh import PERMANENT, build_mesh, compute_level_layout, fine_bands, level_layouts
from fffsim.toolpath import POLYMER, VOID

CONFIGS = Path(__file__).parents[1] / "configs"
crit = pytest.mark.criterion
slow = pytest.mark.slow


# ------------------------------------------------------------------ fixtures

@pytest.fixture(scope="session")
def desk():
    return load_config(CONFIGS / "block.yaml")


@pytest.fixture(scope="session")
def desk_quiet(desk):
    return simulate(desk, "quiet")


@pytest.fixture(scope="session")
def desk_hybrid(desk):
    return simulate(desk, "hybrid")


@pytest.fixture(scope="session")
def desk_adaptive(desk):
    return simulate(desk, "adaptive", record_states=True)


@pytest.fixture(scope="session")
def infill():
    return load_config(CONFIGS / "infill50.yaml")


@pytest.fixture(scope="session")
def infill_hybrid(infill):
    return simulate(infill, "hybrid")


@pytest.fixture(scope="session")
def infill_adaptive(infill):
    return simulate(infill, "adaptive", record_states=True)


# ------------------------------------------------------------------ 1

@crit(1, "single element follows lumped-capacitance cooling within 1%")
def test_lumped_cooling():
    t0 = time.perf_counter()
    cell = (0.5e-3, 0.5e-3, 0.2e-3)
    mats = np.full((2, 1, 1), POLYMER, np.int8)
    mats[0] = VOID  # lift the cell off the bed so every face convects
    m = build_mesh(grid(1, 1, 2, *cell), mats, fine_bands(0, 2), level_layouts(1, 1, 2, 1),
                   np.ones((2, 1, 1), bool))
    assert m.faces.count(PERMANENT) == 6
    h, t_inf, t_start = 25.0, 25.0, 175.0
    area = 2 * (cell[0] * cell[1] + (cell[0] + cell[1]) * cell[2])
    tau = PLA.volumetric_capacity * np.prod(cell) / (h * area)
    dt = 0.01 * tau
    s = assemble(m, h, t_inf)
    st = ThermalState(np.full(m.n_nodes, t_start))
    worst = 0.0
    for n in range(1, 501):
        st = step(s, st, dt)
        exact = t_inf + (t_start - t_inf) * np.exp(-n * dt / tau)
        worst = max(worst, float(np.abs(st.T - exact).max() / exact))
    elapsed = time.perf_counter() - t0
    print(f"lumped cooling: max relative error {worst:.3e}, {elapsed:.2f} s")
    assert worst <= 0.01
    assert elapsed < 1.0


# ------------------------------------------------------------------ 2

@crit(2, "steady linear profile through a hanging-node interface")
def test_steady_patch():
    m = dense_mesh(6, 5, 6, bands=[Band(0, 1, 0), Band(1, 2, 0), Band(2, 4, 1), Band(4, 5, 0),
                                   Band(5, 6, 0)], spacing=(0.5e-3, 0.5e-3, 0.2e-3))
    assert len(m.dep) > 0
    top = m.node_ijk[:, 2].max()
    st = initial_state(m, 25.0, 60.0)
    st.locked.update({int(n): 25.0 for n in np.flatnonzero(m.node_ijk[:, 2] == top)})
    out = solve_steady(assemble(m, 0.0, 25.0), st)
    exact = 60.0 - 35.0 * m.node_ijk[:, 2] / top
    err = np.abs(out.T - exact).max()
    print(f"patch test: max nodal error {err:.2e} C over {m.n_nodes} nodes, {len(m.dep)} hanging")
    assert err <= 1e-9


# ------------------------------------------------------------------ 3

@pytest.fixture(scope="module")
def block_10_quiet():
    return simulate(block_config(10, 10, 12), "quiet")


@crit(3, "quiet and hybrid probe series agree within 1e-6 C")
@pytest.mark.parametrize("nh", [1, 2, 4])
def test_mode_equivalence(block_10_quiet, nh):
    cfg = block_config(10, 10, 12, **{"coarsening.quiet_layers_per_remesh": nh})
    hyb = simulate(cfg, "hybrid")
    worst = 0.0
    for a, b in zip(block_10_quiet.probes, hyb.probes):
        ta, Ta = a.arrays()
        tb, Tb = b.arrays()
        assert len(ta) > 0 and np.array_equal(ta, tb)
        worst = max(worst, float(np.abs(Ta - Tb).max()))
    print(f"nh_add={nh}: max |dT| {worst:.2e} C")
    assert worst <= 1e-6


# ------------------------------------------------------------------ 4

@slow
@crit(4, "adaptive vs hybrid on the desk block within 5% after the peak")
def test_adaptive_accuracy(desk, desk_hybrid, desk_adaptive):
    h = desk.scenario.height
    zs = [p.location[2] for p in desk_adaptive.probes]
    assert zs == pytest.approx([h / 10, 2 * h / 5, 3 * h / 5])
    rep = compare_runs(desk_hybrid, desk_adaptive)
    for d in rep.probes:
        print(f"probe {d.probe}: max rel after peak {d.max_rel_after_peak:.4f}, "
              f"max |dT| {d.max_abs:.3f} C over {d.n_common} samples")
        assert d.n_common > 0
        assert d.max_rel_after_peak <= 0.05
    assert desk_adaptive.metrics.coarsening_events


# ------------------------------------------------------------------ 5

@slow
@crit(5, "wall time ordering adaptive < hybrid < quiet with 0.8 and 0.6 bounds")
def test_efficiency(desk_quiet, desk_hybrid, desk_adaptive):
    tq = desk_quiet.metrics.wall_time
    th = desk_hybrid.metrics.wall_time
    ta = desk_adaptive.metrics.wall_time
    print(f"quiet {tq:.1f} s, hybrid {th:.1f} s ({th / tq:.3f}), "
          f"adaptive {ta:.1f} s ({ta / th:.3f} of hybrid, {ta / tq:.3f} of quiet)")
    assert ta < th < tq
    assert th <= 0.8 * tq
    assert ta <= 0.6 * th


# ------------------------------------------------------------------ 6

@slow
@crit(6, "dof traces: quiet flat, hybrid stepwise, adaptive drops below hybrid")
def test_dof_traces(desk_quiet, desk_hybrid, desk_adaptive):
    q = desk_quiet.metrics.total_dofs
    h = desk_hybrid.metrics.total_dofs
    a = desk_adaptive.metrics.total_dofs
    assert np.all(q == q[0])
    dh = np.diff(h)
    assert np.all(dh >= 0)
    jumps = np.flatnonzero(dh > 0) + 1
    starts = [r.first_step for r in desk_hybrid.metrics.remeshing[1:]]
    assert jumps.tolist() == starts
    drops = np.flatnonzero(np.diff(a) < 0)
    assert len(drops)
    first = drops[0] + 1
    assert np.all(a[first:] <= h[first:])
    print(f"hybrid jumps {len(jumps)}, adaptive drops {len(drops)}, "
          f"final dofs {h[-1]} vs {a[-1]}")


# ------------------------------------------------------------------ 7

@slow
@crit(7, "replayed acceptances are nested in epsilon")
def test_eps_monotonicity(desk_adaptive):
    sets = {e: replay_decisions(desk_adaptive, e) for e in (0.01, 0.02, 0.05)}
    print({e: len(s) for e, s in sets.items()})
    assert sets[0.01] <= sets[0.02] <= sets[0.05]
    assert sets[0.01] == {d.key for d in desk_adaptive.decisions if d.accepted}


# ------------------------------------------------------------------ 8

@crit(8, "level layouts for 18 and 19 elements and exhaustive segment rules")
def test_layouts():
    lv18 = compute_level_layout(18, 2, 2)
    assert lv18[1] == [2] * 9 and lv18[2] == [4, 4, 4, 6]
    lv19 = compute_level_layout(19, 2, 2)
    assert lv19[1] == [2] * 8 + [3] and lv19[2] == [4, 4, 4, 4, 3]
    for n in range(1, 65):
        for k, seg in enumerate(compute_level_layout(n, 2, 5)):
            assert sum(seg) == n
            assert all(s <= 1.5 * 2 ** k for s in seg if s != 2 ** k)


# ------------------------------------------------------------------ 9

@crit(9, "homogenized conductivity and capacity")
def test_homogenization():
    eff = effective_material(0.5, AIR, PLA)
    assert eff.conductivity == pytest.approx(0.0765, rel=1e-15, abs=0)
    assert eff.volumetric_capacity == pytest.approx(1116504.78, rel=1e-15, abs=0)
    assert effective_material(0.0, AIR, PLA) == AIR
    assert effective_material(1.0, AIR, PLA) == PLA


# ------------------------------------------------------------------ 10

@slow
@crit(10, "infill adaptive within 5% of infill hybrid and keeps more fine layers")
def test_infill(infill, infill_hybrid, infill_adaptive, desk_adaptive):
    rep = compare_runs(infill_hybrid, infill_adaptive)
    for d in rep.probes:
        print(f"infill probe {d.probe}: max rel after peak {d.max_rel_after_peak:.4f}")
        assert d.max_rel_after_peak <= 0.05
    fi = infill_adaptive.fine_layer_history
    fd = desk_adaptive.fine_layer_history
    assert len(fi) == len(fd)
    print(f"fine layers at the last remesh step: infill {fi[-1]}, dense {fd[-1]}")
    assert np.all(fi >= fd)


# ------------------------------------------------------------------ 11

@crit(11, "structural invariants over at least 1000 randomized cases")
def test_invariant_suite():
    t0 = time.perf_counter()
    suite = [props.test_element_matrices, props.test_constraint_weights_and_linear_exactness,
             props.test_coarsening_conserves_volume, props.test_assembly_conservation,
             props.test_step_residual]
    for fn in suite:
        fn()
    elapsed = time.perf_counter() - t0
    print(f"{len(suite) * props.N} cases in {elapsed:.1f} s")
    assert len(suite) * props.N >= 1000
