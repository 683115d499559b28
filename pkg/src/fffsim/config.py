"""Simulation configuration: materials, process, coarsening and scenario.

Config files are YAML. Lengths in the file are millimetres, speeds mm/s and
temperatures degrees Celsius; everything is converted to SI on load. See
``README.md`` for the full key list.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

MM = 1e-3


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigParseError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    density: float  # kg/m^3
    specific_heat: float  # J/(kg K)
    conductivity: float  # W/(m K)

    def __post_init__(self):
        for name in ("density", "specific_heat", "conductivity"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be > 0, got {v!r}")

    @property
    def volumetric_capacity(self) -> float:
        return self.density * self.specific_heat


PLA = Material(1240.0, 1800.0, 0.13)
AIR = Material(1.41, 716.0, 0.023)


@dataclass(frozen=True)
class ProcessParameters:
    print_speed: float = 30 * MM  # m/s
    layer_height: float = 0.2 * MM
    filament_width: float = 0.5 * MM
    element_length: float | None = None  # defaults to filament_width
    nozzle_temperature: float = 210.0
    activation_temperature: float = 175.0
    ambient_temperature: float = 25.0
    bed_temperature: float = 60.0
    convection_coefficient: float = 25.0
    dwell: float = 0.0  # s of cool-down after the last deposition

    def __post_init__(self):
        if self.element_length is None:
            object.__setattr__(self, "element_length", self.filament_width)
        for name in ("print_speed", "layer_height", "filament_width", "element_length"):
            _positive(f"process.{name}", getattr(self, name))
        _nonneg("process.convection_coefficient", self.convection_coefficient)
        _nonneg("process.dwell", self.dwell)
        for name in ("nozzle_temperature", "activation_temperature",
                     "ambient_temperature", "bed_temperature"):
            _finite(f"process.{name}", getattr(self, name))
        if self.activation_temperature > self.nozzle_temperature:
            raise ConfigError("process.activation_temperature",
                              "must not exceed the nozzle temperature")

    @property
    def time_step(self) -> float:
        return compute_time_step(self.element_length, self.print_speed)


@dataclass(frozen=True)
class CoarseningParameters:
    max_levels: int = 3
    factor: int = 2
    quiet_layers_per_remesh: int = 1
    epsilon: float = 0.01
    denominator_floor: float = 1.0
    # temperature scale of the relative-error denominator: "kelvin" or "celsius"
    error_scale: str = "kelvin"

    def __post_init__(self):
        _integer("coarsening.max_levels", self.max_levels, 0)
        _integer("coarsening.factor", self.factor, 2)
        _integer("coarsening.quiet_layers_per_remesh", self.quiet_layers_per_remesh, 1)
        # epsilon = 0 is accepted: it disables coarsening (strict inequality)
        _nonneg("coarsening.epsilon", self.epsilon)
        _positive("coarsening.denominator_floor", self.denominator_floor)
        if self.error_scale not in ERROR_SCALES:
            raise ConfigError("coarsening.error_scale", f"expected one of {ERROR_SCALES}")

    @property
    def error_offset(self) -> float:
        """Added to nodal °C values in the error denominator."""
        return 273.15 if self.error_scale == "kelvin" else 0.0


ERROR_SCALES = ("kelvin", "celsius")
GEOMETRIES = ("block", "bridge")
PATTERNS = ("dense", "rectilinear")
MODES = ("quiet", "hybrid", "adaptive")


@dataclass(frozen=True)
class BridgeShape:
    """Two pillars at the x-ends joined by a deck spanning the full width."""

    pillar_width: float = 3 * MM
    deck_thickness: float = 2 * MM


@dataclass(frozen=True)
class ScenarioSpec:
    geometry_kind: str = "block"
    width: float = 14 * MM  # x
    length: float = 14 * MM  # y
    height: float = 16 * MM  # z
    infill_density: float = 1.0
    infill_pattern: str = "dense"
    perimeter_cells: int = 1
    activation_mode: str = "adaptive"
    probe_locations: tuple = ()
    bridge: BridgeShape = field(default_factory=BridgeShape)

    def __post_init__(self):
        if self.geometry_kind not in GEOMETRIES:
            raise ConfigError("scenario.geometry", f"expected one of {GEOMETRIES}")
        if self.infill_pattern not in PATTERNS:
            raise ConfigError("scenario.infill_pattern", f"expected one of {PATTERNS}")
        if self.activation_mode not in MODES:
            raise ConfigError("scenario.activation_mode", f"expected one of {MODES}")
        for name in ("width", "length", "height"):
            _positive(f"scenario.{name}", getattr(self, name))
        a = self.infill_density
        _finite("scenario.infill_density", a)
        if not 0 < a <= 1:
            raise ConfigError("scenario.infill_density", f"must be in (0, 1], got {a}")
        if (a == 1) != (self.infill_pattern == "dense"):
            raise ConfigError("scenario.infill_density",
                              "density 1 requires pattern 'dense' and vice versa")
        _integer("scenario.perimeter_cells", self.perimeter_cells, 0)
        probes = tuple(tuple(float(c) for c in p) for p in self.probe_locations)
        object.__setattr__(self, "probe_locations", probes)
        for p in probes:
            if len(p) != 3:
                raise ConfigError("scenario.probes_mm", "each probe needs (x, y, z)")
            box = (self.width, self.length, self.height)
            if any(not 0 <= c <= b for c, b in zip(p, box)):
                raise ConfigError("scenario.probes_mm", f"probe {p} outside the part")
        if self.geometry_kind == "bridge":
            _positive("scenario.bridge.pillar_width", self.bridge.pillar_width)
            _positive("scenario.bridge.deck_thickness", self.bridge.deck_thickness)
            if 2 * self.bridge.pillar_width >= self.width:
                raise ConfigError("scenario.bridge.pillar_width", "pillars overlap")
            if self.bridge.deck_thickness >= self.height:
                raise ConfigError("scenario.bridge.deck_thickness", "deck taller than part")

    def total_layers(self, process: ProcessParameters) -> int:
        return max(1, round(self.height / process.layer_height))


@dataclass(frozen=True)
class SolverOptions:
    quiet_scale: float = 1e-9
    tolerance: float = 1e-10
    max_iterations: int = 1000
    lumped_capacitance: bool = False

    def __post_init__(self):
        _positive("solver.quiet_scale", self.quiet_scale)
        if self.quiet_scale >= 1:
            raise ConfigError("solver.quiet_scale", "must be < 1")
        _positive("solver.tolerance", self.tolerance)
        _integer("solver.max_iterations", self.max_iterations, 1)


@dataclass(frozen=True)
class OutputOptions:
    field_fractions: tuple = (0.25, 0.75, 1.0)
    remesh_fields: bool = True  # also export at the end of every remeshing step

    def __post_init__(self):
        fr = tuple(float(f) for f in self.field_fractions)
        object.__setattr__(self, "field_fractions", fr)
        if any(not 0 < f <= 1 for f in fr):
            raise ConfigError("output.field_fractions", "fractions must lie in (0, 1]")


@dataclass(frozen=True)
class SimulationConfig:
    polymer: Material = PLA
    air: Material = AIR
    process: ProcessParameters = field(default_factory=ProcessParameters)
    coarsening: CoarseningParameters = field(default_factory=CoarseningParameters)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: OutputOptions = field(default_factory=OutputOptions)

    @property
    def time_step(self) -> float:
        return self.process.time_step

    @property
    def total_layers(self) -> int:
        return self.scenario.total_layers(self.process)

    def probes(self) -> list[tuple[float, float, float]]:
        """Probe locations in metres; defaults to the three thermocouple spots."""
        if self.scenario.probe_locations:
            return [tuple(c * MM for c in p) for p in self.scenario.probe_locations]
        s = self.scenario
        x, y = 4 / 7 * s.width, 4 / 7 * s.length
        return [(x, y, f * s.height) for f in (0.1, 0.4, 0.6)]

    def replace(self, **sections) -> "SimulationConfig":
        """Copy with dotted overrides, e.g. ``replace(**{"scenario.activation_mode": "quiet"})``."""
        groups: dict[str, dict] = {}
        top = {}
        for key, val in sections.items():
            if "." in key:
                sec, name = key.split(".", 1)
                groups.setdefault(sec, {})[name] = val
            else:
                top[key] = val
        for sec, kw in groups.items():
            top[sec] = dataclasses.replace(top.get(sec, getattr(self, sec)), **kw)
        return dataclasses.replace(self, **top)


def compute_time_step(dl: float, v_p: float) -> float:
    """Time to deposit one element of length ``dl`` at print speed ``v_p``."""
    if not (dl > 0 and v_p > 0):
        raise ValueError("element length and print speed must be positive")
    return dl / v_p


# ---------------------------------------------------------------- file format

_MATERIAL_KEYS = {
    "density_kg_m3": "density",
    "specific_heat_J_kgK": "specific_heat",
    "conductivity_W_mK": "conductivity",
}
# file key -> (attribute, scale to SI)
_PROCESS_KEYS = {
    "print_speed_mm_s": ("print_speed", MM),
    "layer_height_mm": ("layer_height", MM),
    "filament_width_mm": ("filament_width", MM),
    "element_length_mm": ("element_length", MM),
    "nozzle_temperature_C": ("nozzle_temperature", 1.0),
    "activation_temperature_C": ("activation_temperature", 1.0),
    "ambient_temperature_C": ("ambient_temperature", 1.0),
    "bed_temperature_C": ("bed_temperature", 1.0),
    "convection_coefficient_W_m2K": ("convection_coefficient", 1.0),
    "dwell_s": ("dwell", 1.0),
}
_COARSENING_KEYS = {
    "max_levels": "max_levels",
    "factor": "factor",
    "quiet_layers_per_remesh": "quiet_layers_per_remesh",
    "epsilon": "epsilon",
    "denominator_floor_C": "denominator_floor",
}
_SCENARIO_KEYS = {
    "geometry": ("geometry_kind", None),
    "width_mm": ("width", MM),
    "length_mm": ("length", MM),
    "height_mm": ("height", MM),
    "infill_density": ("infill_density", None),
    "infill_pattern": ("infill_pattern", None),
    "perimeter_cells": ("perimeter_cells", None),
    "activation_mode": ("activation_mode", None),
}
_SOLVER_KEYS = ("quiet_scale", "tolerance", "max_iterations", "lumped_capacitance")


def _section(tree: dict, name: str) -> dict:
    sec = tree.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigParseError(f"section '{name}' must be a mapping")
    return sec


def _check_keys(sec: dict, allowed, prefix: str):
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}", "unknown key")


def _number(key: str, v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    return float(v)


def config_from_dict(tree: dict) -> SimulationConfig:
    if not isinstance(tree, dict):
        raise ConfigParseError("top level must be a mapping")
    _check_keys(tree, {"materials", "process", "coarsening", "scenario", "solver", "output"}, "config")

    mats = _section(tree, "materials")
    _check_keys(mats, {"polymer", "air"}, "materials")
    materials = {}
    for name, default in (("polymer", PLA), ("air", AIR)):
        sec = mats.get(name) or {}
        _check_keys(sec, _MATERIAL_KEYS, f"materials.{name}")
        kw = {attr: getattr(default, attr) for attr in _MATERIAL_KEYS.values()}
        for k, attr in _MATERIAL_KEYS.items():
            if k in sec:
                kw[attr] = _number(f"materials.{name}.{k}", sec[k])
        try:
            materials[name] = Material(**kw)
        except ConfigError as e:
            raise ConfigError(f"materials.{name}.{e.field}", str(e).split(": ", 1)[1]) from None

    sec = _section(tree, "process")
    _check_keys(sec, _PROCESS_KEYS, "process")
    kw = {attr: _number(f"process.{k}", sec[k]) * s
          for k, (attr, s) in _PROCESS_KEYS.items() if k in sec and sec[k] is not None}
    process = ProcessParameters(**kw)

    sec = _section(tree, "coarsening")
    _check_keys(sec, set(_COARSENING_KEYS) | {"error_scale"}, "coarsening")
    kw = {}
    if "error_scale" in sec:
        kw["error_scale"] = sec["error_scale"]
    for k, attr in _COARSENING_KEYS.items():
        if k in sec:
            v = _number(f"coarsening.{k}", sec[k])
            kw[attr] = int(v) if attr not in ("epsilon", "denominator_floor") and v == int(v) else v
    coarsening = CoarseningParameters(**kw)

    sec = _section(tree, "scenario")
    _check_keys(sec, set(_SCENARIO_KEYS) | {"probes_mm", "bridge"}, "scenario")
    kw = {}
    for k, (attr, s) in _SCENARIO_KEYS.items():
        if k in sec:
            v = sec[k]
            if s is not None:
                v = _number(f"scenario.{k}", v) * s
            elif attr in ("infill_density",):
                v = _number(f"scenario.{k}", v)
            elif attr == "perimeter_cells":
                v = int(_number(f"scenario.{k}", v))
            kw[attr] = v
    if "probes_mm" in sec and sec["probes_mm"] is not None:
        probes = sec["probes_mm"]
        if not isinstance(probes, list):
            raise ConfigError("scenario.probes_mm", "expected a list of [x, y, z]")
        kw["probe_locations"] = tuple(
            tuple(_number("scenario.probes_mm", c) for c in p) for p in probes)
    if "bridge" in sec:
        b = sec["bridge"] or {}
        _check_keys(b, {"pillar_width_mm", "deck_thickness_mm"}, "scenario.bridge")
        bkw = {}
        if "pillar_width_mm" in b:
            bkw["pillar_width"] = _number("scenario.bridge.pillar_width_mm", b["pillar_width_mm"]) * MM
        if "deck_thickness_mm" in b:
            bkw["deck_thickness"] = _number("scenario.bridge.deck_thickness_mm", b["deck_thickness_mm"]) * MM
        kw["bridge"] = BridgeShape(**bkw)
    scenario = ScenarioSpec(**kw)

    sec = _section(tree, "solver")
    _check_keys(sec, _SOLVER_KEYS, "solver")
    kw = {}
    for k in _SOLVER_KEYS:
        if k in sec:
            if k == "lumped_capacitance":
                if not isinstance(sec[k], bool):
                    raise ConfigError(f"solver.{k}", "expected true/false")
                kw[k] = sec[k]
            elif k == "max_iterations":
                kw[k] = int(_number(f"solver.{k}", sec[k]))
            else:
                kw[k] = _number(f"solver.{k}", sec[k])
    solver = SolverOptions(**kw)

    sec = _section(tree, "output")
    _check_keys(sec, {"field_fractions", "remesh_fields"}, "output")
    kw = {}
    if "field_fractions" in sec:
        fr = sec["field_fractions"]
        if not isinstance(fr, list):
            raise ConfigError("output.field_fractions", "expected a list of numbers")
        kw["field_fractions"] = tuple(_number("output.field_fractions", f) for f in fr)
    if "remesh_fields" in sec:
        if not isinstance(sec["remesh_fields"], bool):
            raise ConfigError("output.remesh_fields", "expected true/false")
        kw["remesh_fields"] = sec["remesh_fields"]
    output = OutputOptions(**kw)

    return SimulationConfig(materials["polymer"], materials["air"], process,
                            coarsening, scenario, solver, output)


def config_to_dict(cfg: SimulationConfig) -> dict:
    def mat(m: Material):
        return {k: getattr(m, a) for k, a in _MATERIAL_KEYS.items()}

    p = cfg.process
    s = cfg.scenario
    tree = {
        "materials": {"polymer": mat(cfg.polymer), "air": mat(cfg.air)},
        "process": {k: getattr(p, a) / sc for k, (a, sc) in _PROCESS_KEYS.items()},
        "coarsening": {**{k: getattr(cfg.coarsening, a) for k, a in _COARSENING_KEYS.items()},
                       "error_scale": cfg.coarsening.error_scale},
        "scenario": {k: (getattr(s, a) / sc if sc else getattr(s, a))
                     for k, (a, sc) in _SCENARIO_KEYS.items()},
        "solver": {k: getattr(cfg.solver, k) for k in _SOLVER_KEYS},
        "output": {"field_fractions": list(cfg.output.field_fractions),
                   "remesh_fields": cfg.output.remesh_fields},
    }
    if s.probe_locations:
        tree["scenario"]["probes_mm"] = [list(pt) for pt in s.probe_locations]
    if s.geometry_kind == "bridge":
        tree["scenario"]["bridge"] = {"pillar_width_mm": s.bridge.pillar_width / MM,
                                      "deck_thickness_mm": s.bridge.deck_thickness / MM}
    return tree


def load_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParseError(f"cannot read {path}: {e}") from e
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigParseError(f"{path}: {e}") from e
    return config_from_dict(tree if tree is not None else {})


def dump_config(cfg: SimulationConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def _finite(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(key, f"must be a finite number, got {v!r}")


def _positive(key, v):
    _finite(key, v)
    if v <= 0:
        raise ConfigError(key, f"must be > 0, got {v}")


def _nonneg(key, v):
    _finite(key, v)
    if v < 0:
        raise ConfigError(key, f"must be >= 0, got {v}")


def _integer(key, v, lo):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(key, f"must be an integer >= {lo}, got {v!r}")
