from pathlib import Path

import pytest
import yaml

from fffsim.config import (AIR, MM, PLA, ConfigError, ConfigParseError, SimulationConfig,
                           compute_time_step, config_from_dict, config_to_dict, dump_config,
                           load_config)

CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.yaml"))


def test_defaults_are_the_published_materials_and_process():
    assert (PLA.density, PLA.specific_heat, PLA.conductivity) == (1240, 1800, 0.13)
    assert AIR.conductivity == 0.023
    p = SimulationConfig().process
    assert p.print_speed == pytest.approx(0.030)
    assert p.layer_height == pytest.approx(0.2e-3)
    assert p.filament_width == pytest.approx(0.5e-3)
    assert p.element_length == p.filament_width
    assert p.convection_coefficient == 25
    assert p.activation_temperature == 175


def test_published_values_are_accepted(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({
        "materials": {"polymer": {"density_kg_m3": 1240, "specific_heat_J_kgK": 1800,
                                  "conductivity_W_mK": 0.13}},
        "process": {"print_speed_mm_s": 30, "layer_height_mm": 0.2,
                    "filament_width_mm": 0.5, "convection_coefficient_W_m2K": 25}}))
    cfg = load_config(path)
    assert cfg.polymer == PLA
    assert cfg.process.print_speed == pytest.approx(30 * MM)


def test_zero_density_rectilinear_is_rejected():
    with pytest.raises(ConfigError, match="infill_density"):
        config_from_dict({"scenario": {"infill_density": 0, "infill_pattern": "rectilinear"}})


def test_density_one_requires_dense_pattern():
    with pytest.raises(ConfigError, match="infill_density"):
        config_from_dict({"scenario": {"infill_density": 1.0, "infill_pattern": "rectilinear"}})


@pytest.mark.parametrize("dl, vp, dt", [(0.5e-3, 30e-3, 1 / 60), (0.03, 0.03, 1.0),
                                        (8.01e-3, 30e-3, 0.267)])
def test_time_step(dl, vp, dt):
    assert compute_time_step(dl, vp) == pytest.approx(dt, rel=1e-12)


def test_time_step_rejects_nonpositive():
    with pytest.raises(ValueError):
        compute_time_step(0.0, 1.0)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_round_trip_of_shipped_configs(path, tmp_path):
    cfg = load_config(path)
    out = tmp_path / "again.yaml"
    dump_config(cfg, out)
    assert load_config(out) == cfg


def test_round_trip_of_defaults():
    cfg = SimulationConfig()
    assert config_from_dict(config_to_dict(cfg)) == cfg


NUMERIC_FIELDS = [
    ("materials", "polymer", "density_kg_m3", "materials.polymer.density"),
    ("materials", "air", "conductivity_W_mK", "materials.air.conductivity"),
    ("process", None, "print_speed_mm_s", "process.print_speed"),
    ("process", None, "layer_height_mm", "process.layer_height"),
    ("process", None, "filament_width_mm", "process.filament_width"),
    ("process", None, "element_length_mm", "process.element_length"),
    ("coarsening", None, "factor", "coarsening.factor"),
    ("coarsening", None, "quiet_layers_per_remesh", "coarsening.quiet_layers_per_remesh"),
    ("coarsening", None, "denominator_floor_C", "coarsening.denominator_floor"),
    ("scenario", None, "width_mm", "scenario.width"),
    ("scenario", None, "length_mm", "scenario.length"),
    ("scenario", None, "height_mm", "scenario.height"),
    ("solver", None, "tolerance", "solver.tolerance"),
]


@pytest.mark.parametrize("sec, sub, key, name", NUMERIC_FIELDS, ids=lambda v: str(v))
@pytest.mark.parametrize("bad", [0, -1.5])
def test_out_of_range_fields_name_themselves(sec, sub, key, name, bad):
    tree = {sec: {sub: {key: bad}} if sub else {key: bad}}
    with pytest.raises(ConfigError, match=name.replace(".", r"\.")):
        config_from_dict(tree)


@pytest.mark.parametrize("key, name", [("max_levels", "coarsening.max_levels"),
                                       ("epsilon", "coarsening.epsilon")])
def test_negative_coarsening_values(key, name):
    with pytest.raises(ConfigError, match=name):
        config_from_dict({"coarsening": {key: -1}})


def test_epsilon_zero_is_allowed():
    assert config_from_dict({"coarsening": {"epsilon": 0}}).coarsening.epsilon == 0


def test_activation_above_nozzle_is_rejected():
    with pytest.raises(ConfigError, match="activation_temperature"):
        config_from_dict({"process": {"activation_temperature_C": 230,
                                      "nozzle_temperature_C": 210}})


def test_error_scale_values():
    assert SimulationConfig().coarsening.error_offset == pytest.approx(273.15)
    cfg = config_from_dict({"coarsening": {"error_scale": "celsius"}})
    assert cfg.coarsening.error_offset == 0
    with pytest.raises(ConfigError, match="error_scale"):
        config_from_dict({"coarsening": {"error_scale": "rankine"}})


def test_unknown_key_and_bad_types():
    with pytest.raises(ConfigError, match="process.speed"):
        config_from_dict({"process": {"speed": 3}})
    with pytest.raises(ConfigError, match="print_speed_mm_s"):
        config_from_dict({"process": {"print_speed_mm_s": "fast"}})


def test_probe_outside_part_is_rejected():
    with pytest.raises(ConfigError, match="probes"):
        config_from_dict({"scenario": {"width_mm": 2, "probes_mm": [[3, 0, 0]]}})


def test_probe_defaults_follow_height_fractions():
    cfg = SimulationConfig()
    zs = [p[2] for p in cfg.probes()]
    h = cfg.scenario.height
    assert zs == pytest.approx([h / 10, 2 * h / 5, 3 * h / 5])


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("process: [1, 2\n")
    with pytest.raises(ConfigParseError):
        load_config(bad)
    with pytest.raises(ConfigParseError):
        load_config(tmp_path / "missing.yaml")


def test_desk_block_size():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "block.yaml")
    assert cfg.total_layers == 80
    assert round(cfg.scenario.width / cfg.process.element_length) == 28
