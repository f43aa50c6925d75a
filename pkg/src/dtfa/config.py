"""Run configuration: JSON schema, defaults and resolution.

Every section is optional in the user file; missing keys take the defaults
below and unknown keys are rejected. The resolved document (defaults filled
in) is what each subcommand writes next to its results.
"""
import copy
import json

import jsonschema

from .errors import ParameterError

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_SEED = {"type": "integer", "minimum": 0}
_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3,
         "maxItems": 3}


def _obj(props, required=()):
    return {"type": "object", "properties": props,
            "required": list(required), "additionalProperties": False}


_MATERIAL = _obj({"E": _POS, "nu": {"type": "number", "exclusiveMinimum": -1,
                                    "exclusiveMaximum": 0.5},
                  "kappa_d": {"type": ["number", "null"], "exclusiveMinimum": 0},
                  "kappa_f": {"type": ["number", "null"], "exclusiveMinimum": 0}})

_STRENGTHS = {"oneOf": [{"type": "null"},
                        _obj({k: _POS for k in ("e11", "e22", "e12", "e13",
                                                "e23")})]}

SCHEMA = _obj({
    "rve": _obj({
        "kind": {"enum": ["rsa", "laminate", "homogeneous"]},
        "n_fibers": {"type": "integer", "minimum": 1},
        "vf": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.6},
        "seed": _SEED,
        "nx": {"type": "integer", "minimum": 8, "maximum": 1024},
        "gap": _NONNEG,
    }),
    "materials": _obj({"fiber": _MATERIAL, "matrix": _MATERIAL}),
    "clustering": _obj({
        "scheme": {"enum": ["elastic", "eigen"]},
        "m": {"type": "integer", "minimum": 1},
        "seed": _SEED,
        "n_init": {"type": "integer", "minimum": 1},
        "trigger_amplitude": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "snapshot_steps": {"type": "integer", "minimum": 2},
    }),
    "program": _obj({
        "load_case": {"enum": ["L1", "L2", "L4", "custom"]},
        "direction": _VEC3,
        "amplitude": _POS,
        "steps": {"type": "integer", "minimum": 1},
    }),
    "online": _obj({
        "psi": {"type": "number", "minimum": 0, "maximum": 1},
        "strengths": _STRENGTHS,
        "tol": _POS,
        "max_iter": {"type": "integer", "minimum": 1},
    }),
    "fem_ref": _obj({"tol": _POS, "max_iter": {"type": "integer", "minimum": 1}}),
    "macro": _obj({
        "L": _POS, "W": _POS, "d": _POS,
        "target_elems": {"type": "integer", "minimum": 64, "maximum": 20000},
        "theta": {"type": "array", "minItems": 1,
                  "items": {"type": "number", "minimum": 0, "maximum": 90}},
        "u_max": _POS,
        "steps": {"type": "integer", "minimum": 1},
        "thickness": _POS,
        "solver": {"enum": ["auto", "newton", "staggered"]},
        "stop_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "crack_threshold": {"type": "number", "exclusiveMinimum": 0,
                            "maximum": 1},
        "vtk_every": {"type": "integer", "minimum": 0},
        "ply": _obj({
            "vf": {"type": "number", "exclusiveMinimum": 0,
                   "exclusiveMaximum": 1},
            "fiber": _MATERIAL, "matrix": _MATERIAL,
        }),
    }),
    "outputs": _obj({
        "dir": {"type": "string", "minLength": 1},
        "formats": {"type": "array", "uniqueItems": True,
                    "items": {"enum": ["csv", "json", "pgm", "vtk"]}},
    }),
})

DEFAULTS = {
    "rve": {"kind": "rsa", "n_fibers": 30, "vf": 0.41, "seed": 3, "nx": 64,
            "gap": 0.0},
    "materials": {
        "fiber": {"E": 80000.0, "nu": 0.3, "kappa_d": None, "kappa_f": None},
        "matrix": {"E": 2670.0, "nu": 0.3, "kappa_d": 0.009,
                   "kappa_f": 0.0315},
    },
    "clustering": {"scheme": "eigen", "m": 20, "seed": 0, "n_init": 4,
                   "trigger_amplitude": None, "snapshot_steps": 50},
    "program": {"load_case": "L1", "direction": [1.0, 0.0, 0.0],
                "amplitude": 0.012, "steps": 60},
    "online": {"psi": 0.0, "strengths": None, "tol": 1e-10, "max_iter": 50},
    "fem_ref": {"tol": 1e-8, "max_iter": 200},
    "macro": {
        "L": 80.0, "W": 18.0, "d": 5.0, "target_elems": 2000,
        "theta": [0.0, 30.0, 45.0, 60.0, 90.0], "u_max": 0.8, "steps": 40,
        "thickness": 0.1, "solver": "auto", "stop_ratio": 0.25,
        "crack_threshold": 0.9, "vtk_every": 10,
        "ply": {
            "vf": 0.41,
            "fiber": {"E": 43050.0, "nu": 0.3, "kappa_d": 0.014,
                      "kappa_f": 0.028},
            "matrix": {"E": 2670.0, "nu": 0.3, "kappa_d": 0.0227,
                       "kappa_f": 0.0455},
        },
    },
    "outputs": {"dir": "dtfa_out", "formats": ["csv", "json", "pgm", "vtk"]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    """Raise :class:`ParameterError` with the schema message if invalid."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParameterError(f"config error at {where}: {exc.message}") from None


def _check_material(name, mat):
    kd, kf = mat["kappa_d"], mat["kappa_f"]
    if (kd is None) != (kf is None):
        raise ParameterError(f"{name}: give both kappa_d and kappa_f or neither")
    if kd is not None and kf <= kd:
        raise ParameterError(f"{name}: kappa_f must exceed kappa_d")


def resolve(doc):
    """Validate ``doc`` and fill in defaults; returns a new dictionary."""
    if not isinstance(doc, dict):
        raise ParameterError("config must be a JSON object")
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    validate(cfg)
    for name, mat in cfg["materials"].items():
        _check_material(f"materials/{name}", mat)
    for name in ("fiber", "matrix"):
        _check_material(f"macro/ply/{name}", cfg["macro"]["ply"][name])
    m = cfg["macro"]
    if m["d"] >= m["W"]:
        raise ParameterError(f"macro: hole diameter {m['d']} must be smaller "
                             f"than the width {m['W']}")
    return cfg


def load(path):
    """Read, validate and resolve a config file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config {path} is not valid JSON: {exc}") from None
    return resolve(doc)


def dumps(cfg):
    """Canonical text of a resolved config."""
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
