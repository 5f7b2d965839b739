"""Run configuration: JSON schema, defaults and model construction.

All lengths are in mm, forces in N, moduli in MPa and energies in mJ.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from .errors import ConfigError
from .geometry import (
    EllipsoidSpec,
    LobeContour,
    SGPatchSpec,
    ThicknessField,
    TriMesh,
    assign_thickness,
    default_atl_contour,
    generate_atl_surface,
    generate_sg_surface,
    triangulate,
)
from .material import Material, fit_material
from .shell import ShellModel, build_shell

MODELS = ("sg", "atl")
THICKNESS_KINDS = ("const", "taper")
ACTUATOR_LABELS = {("sg", "const"): "SG-const", ("sg", "taper"): "SG-taper",
                   ("atl", "const"): "ATL-const", ("atl", "taper"): "ATL-taper"}

PRINT_SETTINGS = {
    "slicer": "PrusaSlicer 2.8.1",
    "nozzle_diameter_mm": 0.6,
    "printing_temperature_c": 220,
    "bed_temperature_c": 60,
    "tool_fans_percent": {"min": 20, "max": 60},
    "layer_height_mm": 0.2,
    "perimeters": 3,
    "extrusion_multiplier": 1.1,
    "printing_speed_mm_s": 30,
    "supports": "On",
    "ironing": "On",
}
MATERIAL_PROPERTIES = {
    "filament": "Fiberflex 40D TPE",
    "density_g_cm3": 1.16,
    "stress_at_strain_mpa": {"5%": 2, "10%": 4, "50%": 9, "break": 28},
    "elongation_at_break_percent": 700,
    "tear_strength_kn_m": 115,
    "melting_temperature_c": 160,
}

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {"enum": list(MODELS)},
        "thickness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(THICKNESS_KINDS)},
                "constant_mm": _POS,
                "tip_mm": _POS,
                "base_mm": _POS,
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target_edge_mm": _POS,
                "ellipsoid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"a": _POS, "b": _POS, "c": _POS},
                },
                "contour": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["points", "free_edge", "apex"],
                    "properties": {
                        "points": {"type": "array", "minItems": 4,
                                   "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
                        "free_edge": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                        "apex": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    },
                },
                "rib_offset_mm": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "sg": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "length_mm": _POS,
                        "width_mm": _POS,
                        "k_long_per_mm": _NUM,
                        "k_trans_per_mm": _NUM,
                        "restraint_mm": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "datasheet": {"type": "array", "minItems": 1,
                              "items": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}},
                "E_mpa": _POS,
                "nu": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grad_tol_n": _POS, "max_iter": {"type": "integer", "minimum": 1}},
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "indenter_radius_mm": _POS,
                "offset_mm": {"type": "number", "minimum": 0},
                "retry_offset_mm": {"type": "number", "minimum": 0},
                "f_thresh_n": _POS,
                "stroke_step_mm": _POS,
                "stroke_max_mm": _POS,
                "holder_width_mm": {"type": "number", "minimum": 0},
            },
        },
        "batch": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "actuators": {"type": "array", "minItems": 1, "uniqueItems": True,
                              "items": {"enum": sorted(ACTUATOR_LABELS.values())}},
                "directions": {"type": "array", "minItems": 1, "uniqueItems": True,
                               "items": {"enum": ["Loading", "Snapping"]}},
                "repetitions": {"type": "integer", "minimum": 1},
                "thickness_noise_mm": {"type": "number", "minimum": 0},
                "guess_noise_mm": {"type": "number", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "model": "atl",
    "thickness": {"kind": "const", "constant_mm": 0.93, "tip_mm": 0.90, "base_mm": 1.30},
    "geometry": {
        "target_edge_mm": 2.0,
        "ellipsoid": {"a": 30.0, "b": 25.0, "c": 15.0},
        "rib_offset_mm": 2.0,
        "sg": {"length_mm": 36.0, "width_mm": 25.0, "k_long_per_mm": 1 / 30.0,
               "k_trans_per_mm": 1 / 21.0, "restraint_mm": 0.0},
    },
    "material": {"nu": 0.45},
    "solver": {"grad_tol_n": 1e-6, "max_iter": 300},
    "protocol": {
        "indenter_radius_mm": 2.5,
        "offset_mm": 0.0,
        "retry_offset_mm": 3.0,
        "f_thresh_n": 0.01,
        "stroke_step_mm": 0.25,
        "stroke_max_mm": 20.0,
        "holder_width_mm": 0.0,
    },
    "batch": {
        "actuators": ["SG-const", "SG-taper", "ATL-const", "ATL-taper"],
        "directions": ["Loading", "Snapping"],
        "repetitions": 3,
        "thickness_noise_mm": 0.05,
        "guess_noise_mm": 0.001,
    },
    "seed": 0,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "contour":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def actuator(self) -> str:
        return ACTUATOR_LABELS[(self.data["model"], self.data["thickness"]["kind"])]

    def with_overrides(self, **kw) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if kw.get("model"):
            d["model"] = kw["model"]
        if kw.get("thickness"):
            d["thickness"]["kind"] = kw["thickness"]
        if kw.get("seed") is not None:
            d["seed"] = kw["seed"]
        return validate_config(d)

    def for_actuator(self, label: str) -> "RunConfig":
        model, kind = {v: k for k, v in ACTUATOR_LABELS.items()}[label]
        return self.with_overrides(model=model, thickness=kind)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def validate_config(data: dict) -> RunConfig:
    """Check ``data`` against the schema and fill in defaults."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    merged = _merge(DEFAULTS, data)
    th = merged["thickness"]
    if th["tip_mm"] > th["base_mm"]:
        raise ConfigError("thickness tip_mm must not exceed base_mm")
    return RunConfig(merged)


def load_config(path=None) -> RunConfig:
    if path is None:
        return validate_config({})
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(data)


def thickness_field(cfg: RunConfig, offset: float = 0.0) -> ThicknessField:
    th = cfg["thickness"]
    if th["kind"] == "const":
        t = th["constant_mm"] + offset
        return ThicknessField.constant(t)
    return ThicknessField.taper(th["tip_mm"] + offset, th["base_mm"] + offset)


def material_from(cfg: RunConfig) -> Material:
    m = cfg["material"]
    if "E_mpa" in m:
        return Material(m["E_mpa"], m["nu"])
    from .material import TPE_DATASHEET

    return fit_material(m.get("datasheet", TPE_DATASHEET), m["nu"])


def build_mesh(cfg: RunConfig, thickness_offset: float = 0.0) -> TriMesh:
    g = cfg["geometry"]
    if cfg["model"] == "atl":
        if "contour" in g:
            c = g["contour"]
            contour = LobeContour(np.array(c["points"], dtype=float), tuple(c["free_edge"]),
                                  tuple(c["apex"]), rib_offset=g["rib_offset_mm"])
        else:
            contour = default_atl_contour(rib_offset=g["rib_offset_mm"])
        e = g["ellipsoid"]
        patch = generate_atl_surface(contour, EllipsoidSpec(e["a"], e["b"], e["c"]))
    else:
        s = g["sg"]
        patch = generate_sg_surface(SGPatchSpec(s["length_mm"], s["width_mm"], s["k_long_per_mm"],
                                                s["k_trans_per_mm"], s["restraint_mm"]))
    mesh = triangulate(patch, g["target_edge_mm"])
    return assign_thickness(mesh, thickness_field(cfg, thickness_offset))


def build_model(cfg: RunConfig, thickness_offset: float = 0.0) -> tuple[TriMesh, ShellModel]:
    mesh = build_mesh(cfg, thickness_offset)
    return mesh, build_shell(mesh, material_from(cfg))
