import numpy as np
import pytest

from helpers import Band, block_config, dense_mesh
from fffsim.activation import simulate
from fffsim.coarsen import (CoarseningDecision, build_potential_mesh, candidate_groups,
                            check_layer, coarsen_bands, interpolate_coarse, lowest_group,
                            map_solution, merge_group, replay_decisions, write_decision_log)
from fffsim.config import AIR, PLA
from fffsim.homog import effective_material
from fffsim.mesh import MAT_HOMOGENIZED

FINE4 = [Band(0, 1, 0), Band(1, 2, 0), Band(2, 3, 0), Band(3, 4, 0)]


def test_interpolation_examples():
    rng = np.random.default_rng(0)
    xi = rng.uniform(-1, 1, (50, 3))
    assert np.allclose(interpolate_coarse(np.full(8, 100.0), xi), 100.0)
    assert interpolate_coarse([8, 0, 0, 0, 0, 0, 0, 0], [0, 0, 0]) == pytest.approx(1.0)
    corners = 2 * np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]) - 1
    lin = lambda p: 3.0 - 2.0 * p[..., 0] + 0.5 * p[..., 1] + 7.0 * p[..., 2]
    assert np.allclose(interpolate_coarse(lin(corners), xi), lin(xi))
    assert np.allclose(interpolate_coarse(corners[:, 0], corners), corners[:, 0])


def test_group_merging():
    assert merge_group(FINE4, 2, 2) == FINE4[:2] + [Band(2, 4, 1)]
    assert list(candidate_groups(FINE4, 2, 2)) == [0, 2]
    bands = [Band(0, 2, 1), Band(2, 3, 0), Band(3, 4, 0)]
    assert list(candidate_groups(bands, 2, 1)) == [1]
    assert lowest_group(bands, 0, 2) == 1
    assert lowest_group(bands, 1, 2) is None
    assert lowest_group(FINE4, 0, 2, skip={0}) == 2


def test_potential_mesh_of_a_fine_pair():
    m = dense_mesh(4, 4, 4)
    pot = build_potential_mesh(m, Band(0, 2, 1))
    coarse = pot.level == 1
    assert coarse.sum() == 4
    assert np.all(pot.box[coarse][:, 5] - pot.box[coarse][:, 4] == 2)
    assert pot.volumes().sum() == pytest.approx(m.volumes().sum())
    assert pot.bands == [Band(0, 2, 1), Band(2, 3, 0), Band(3, 4, 0)]


def test_potential_mesh_uses_the_uneven_layout():
    m = dense_mesh(18, 3, 2)
    pot = build_potential_mesh(m, Band(0, 2, 1))
    widths = sorted(set((pot.box[:, 1] - pot.box[:, 0]).tolist()))
    assert widths == [2]
    m = dense_mesh(18, 4, 4, bands=[Band(0, 2, 1), Band(2, 4, 1)])
    pot = build_potential_mesh(m, Band(0, 4, 2))
    sel = pot.level == 2
    assert sorted(set((pot.box[sel, 1] - pot.box[sel, 0]).tolist())) == [4, 6]


@pytest.mark.parametrize("band", [Band(1, 3, 1), Band(0, 3, 1), Band(0, 2, 2), Band(0, 2, 0)])
def test_misaligned_bands_are_rejected(band):
    with pytest.raises(ValueError):
        build_potential_mesh(dense_mesh(4, 4, 4), band)


def test_homogenized_potential_mesh():
    m = dense_mesh(4, 4, 2)
    pot = build_potential_mesh(m, Band(0, 2, 1), alpha=0.5)
    eff = effective_material(0.5, AIR, PLA)
    assert np.all(pot.material[pot.level == 1] == MAT_HOMOGENIZED)
    assert np.allclose(pot.conductivity[pot.level == 1], eff.conductivity)


def _state(m, fn):
    return fn(m.coords)


def test_uniform_band_accepts_for_any_positive_eps():
    m = dense_mesh(4, 4, 4)
    pot = build_potential_mesh(m, Band(0, 2, 1))
    T = np.full(m.n_nodes, 80.0)
    for eps in (1e-12, 0.01, 5.0):
        d = check_layer(m, T, pot, Band(0, 2, 1), eps)
        assert d.accepted and d.worst_error == 0.0
    assert not check_layer(m, T, pot, Band(0, 2, 1), 0.0).accepted


def test_linear_band_is_exact():
    m = dense_mesh(5, 4, 4, spacing=(0.5e-3, 0.5e-3, 0.2e-3))
    T = _state(m, lambda p: 60 + 1e4 * p[:, 0] - 3e4 * p[:, 1] + 2e5 * p[:, 2])
    d = check_layer(m, T, build_potential_mesh(m, Band(0, 2, 1)), Band(0, 2, 1), 1e-12)
    assert d.accepted and d.worst_error < 1e-13
    # 5x4 at level 1: 2+3 by 2+2, corners plus 3*5*3 - 3*3*2 vanishing nodes on the band
    assert d.n_checked == 3 * 6 * 5 - 2 * 3 * 3


def test_relative_error_arithmetic():
    # two fine layers over one 1x1 coarse column: the midplane node values are compared
    m = dense_mesh(2, 2, 2)
    pot = build_potential_mesh(m, Band(0, 2, 1))
    z = m.node_ijk[:, 2]
    T = np.select([z == 0, z == 1, z == 2], [99.0, 99.5, 100.0])
    # the midplane interpolates to 99.5 everywhere; its centre node holds 100
    mid = (m.node_ijk == [1, 1, 1]).all(axis=1)
    T[mid] = 100.0
    d = check_layer(m, T, pot, Band(0, 2, 1), 0.01)
    assert d.accepted
    assert d.worst_error == pytest.approx(0.5 / 100)
    assert d.worst_node == m.node_lattice()[mid][0]


def test_steep_gradient_is_rejected_at_the_hot_side():
    m = dense_mesh(3, 3, 2, spacing=(0.5e-3, 0.5e-3, 0.2e-3))
    z = m.node_ijk[:, 2]
    T = np.select([z == 0, z == 1, z == 2], [60.0, 70.0, 150.0])
    pot = build_potential_mesh(m, Band(0, 2, 1))
    for offset in (0.0, 273.15):
        d = check_layer(m, T, pot, Band(0, 2, 1), 0.01, offset=offset)
        assert not d.accepted
        assert d.worst_error == pytest.approx(35 / (70 + offset))
        lat = m.node_lattice()
        assert z[np.flatnonzero(lat == d.worst_node)[0]] == 1


def test_denominator_floor():
    m = dense_mesh(2, 2, 2)
    z = m.node_ijk[:, 2]
    T = np.select([z == 0, z == 1, z == 2], [-0.2, 0.1, 0.2])
    pot = build_potential_mesh(m, Band(0, 2, 1))
    d = check_layer(m, T, pot, Band(0, 2, 1), 1.0, floor=1.0)
    assert d.worst_error == pytest.approx(0.1)


def test_map_solution_keeps_surviving_nodes():
    m = dense_mesh(4, 4, 4)
    rng = np.random.default_rng(1)
    T = m.expand(m.restrict(rng.uniform(30, 200, m.n_nodes)))
    pot = build_potential_mesh(m, Band(0, 2, 1))
    st = map_solution(m, T, pot, 25.0)
    lat_old = dict(zip(m.node_lattice().tolist(), T.tolist()))
    indep = ~pot.dependent
    for n in np.flatnonzero(indep):
        assert st.T[n] == lat_old[int(pot.node_lattice()[n])]
    again = map_solution(m, T, m, 25.0)
    assert np.array_equal(again.T, T)


def test_map_solution_fills_new_quiet_layers():
    m = dense_mesh(3, 3, 2)
    bigger = dense_mesh(3, 3, 4, active=False)
    T = np.linspace(40, 90, m.n_nodes)
    st = map_solution(m, T, bigger, 25.0)
    old = bigger.node_ijk[:, 2] <= 2
    assert np.array_equal(st.T[old], T)
    assert np.all(st.T[~old] == 25.0)


def test_coarsen_bands_with_huge_eps_reaches_the_top_level():
    m = dense_mesh(8, 8, 8)
    T = np.full(m.n_nodes, 50.0)
    T[m.node_ijk[:, 2] == 8] = 170.0
    out, T2, decs = coarsen_bands(m, T, 1e9, 1.0, 3)
    assert out.bands == [Band(0, 8, 3)]
    assert all(d.accepted for d in decs)
    assert out.volumes().sum() == pytest.approx(m.volumes().sum())
    assert len(T2) == out.n_nodes


def test_coarsen_bands_stops_at_the_first_rejection():
    m = dense_mesh(4, 4, 4)
    z = m.node_ijk[:, 2]
    T = np.where(z >= 3, 150.0, 50.0)  # curvature only in the upper pair
    out, _, decs = coarsen_bands(m, T, 0.01, 1.0, 2)
    assert [d.accepted for d in decs] == [True, False]
    assert decs[-1].band_lo == 2
    assert out.bands == [Band(0, 2, 1), Band(2, 3, 0), Band(3, 4, 0)]


def test_zero_eps_never_coarsens():
    m = dense_mesh(4, 4, 4)
    _, _, decs = coarsen_bands(m, np.full(m.n_nodes, 50.0), 0.0, 1.0, 2)
    assert len(decs) == 1 and not decs[0].accepted


def test_adaptive_with_zero_eps_matches_hybrid():
    cfg = block_config(4, 4, 6, **{"coarsening.epsilon": 0.0,
                                   "coarsening.quiet_layers_per_remesh": 2})
    a, h = simulate(cfg, "adaptive"), simulate(cfg, "hybrid")
    assert np.array_equal(a.metrics.total_dofs, h.metrics.total_dofs)
    for pa, ph in zip(a.probes, h.probes):
        assert np.array_equal(pa.arrays()[1], ph.arrays()[1])
    assert not a.metrics.coarsening_events


def test_adaptive_with_huge_eps_coarsens_everything_it_can():
    cfg = block_config(4, 4, 9, **{"coarsening.epsilon": 1e9,
                                   "coarsening.quiet_layers_per_remesh": 1,
                                   "coarsening.max_levels": 2})
    res = simulate(cfg, "adaptive", record_states=True)
    final = res.recorded[-1][1]
    assert final[:2] == [Band(0, 4, 2), Band(4, 8, 2)]
    d = res.metrics.total_dofs
    assert np.any(np.diff(d) < 0)
    assert replay_decisions(res, 1e9) == {d.key for d in res.decisions if d.accepted}


def test_replay_is_monotone_in_eps():
    cfg = block_config(6, 6, 12, **{"coarsening.quiet_layers_per_remesh": 2})
    res = simulate(cfg, "adaptive", record_states=True)
    sets = [replay_decisions(res, e) for e in (0.001, 0.01, 0.02, 0.05, 1e9)]
    for a, b in zip(sets, sets[1:]):
        assert a <= b


def test_decision_log(tmp_path):
    p = tmp_path / "d.csv"
    write_decision_log([CoarseningDecision(3, 0, 2, 1, True, 1.5e-3, 42, 9),
                        CoarseningDecision(3, 2, 4, 1, False, 0.2, 77, 9)], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,band_lo,band_hi,level,verdict,worst_err,worst_node"
    assert lines[1] == "3,0,2,1,accept,1.500000e-03,42"
    assert lines[2].split(",")[4] == "reject"
