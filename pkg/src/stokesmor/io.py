"""Scenario files, JSON/CSV serialization and atomic file output."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InvalidInputError, OutputError, ParseError
from .fields import AmbientField, FlowField, GridSample, ambient_from_dict
from .geometry import Box, ParticleConfig, generate_lattice, generate_poisson_disk
from .reflections import SolverOptions

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_BOX = {
    "type": "object", "additionalProperties": False, "required": ["lo", "hi"],
    "properties": {"lo": _VEC3, "hi": _VEC3},
}
_PARTICLES = {
    "type": "object", "additionalProperties": False, "required": ["particles"],
    "properties": {
        "particles": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["center", "radius"],
            "properties": {"center": _VEC3, "radius": {"type": "number"}},
        }},
        "box": _BOX,
    },
}
_LATTICE = {
    "type": "object", "additionalProperties": False,
    "required": ["kind", "n_per_side", "spacing", "radius"],
    "properties": {"kind": {"const": "lattice"}, "n_per_side": {"type": "integer", "minimum": 1},
                   "spacing": {"type": "number"}, "radius": {"type": "number"}},
}
_POISSON = {
    "type": "object", "additionalProperties": False,
    "required": ["kind", "count", "box", "min_gap", "radius"],
    "properties": {"kind": {"const": "poisson_disk"}, "count": {"type": "integer", "minimum": 0},
                   "box": _BOX, "min_gap": {"type": "number"}, "radius": {"type": "number"}},
}
_GENERATED = {
    "type": "object", "additionalProperties": False, "required": ["generator"],
    "properties": {"generator": {"oneOf": [_LATTICE, _POISSON]}},
}
_SOLVER = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "degree": {"enum": [1, 2]}, "gamma": {"type": "number"},
        "max_iterations": {"type": "integer", "minimum": 0}, "tol": {"type": "number"},
        "q": {"type": "number"}, "quad_order": {"type": "integer"}, "radial_nodes": {"type": "integer"},
        "window": {"type": "integer"}, "discard": {"type": "integer"},
        "residual": {"enum": ["moment", "full"]}, "divergence_factor": {"type": "number"},
        "keep_history": {"type": "boolean"},
    },
}
_FAMILY = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["kind", "n_per_side"],
         "properties": {"kind": {"const": "lattice"}, "n_per_side": {"type": "integer", "minimum": 1},
                        "radius": {"type": "number"}}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "count"],
         "properties": {"kind": {"const": "poisson_disk"}, "count": {"type": "integer", "minimum": 1},
                        "radius": {"type": "number"}, "spread": {"type": "number"}}},
    ]
}
OUTPUT_NAMES = ("report", "residuals", "field", "grid", "sweep_csv", "sweep_json")
DEFAULT_OUTPUTS = {"report": "report.json", "residuals": "residuals.csv", "field": "field.json",
                   "grid": "grid.csv", "sweep_csv": "sweep.csv", "sweep_json": "sweep.json"}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string"},
        "config": {"oneOf": [_PARTICLES, _GENERATED]},
        "seed": {"type": "integer"},
        "ambient": {"type": "object"},
        "solver": _SOLVER,
        "outputs": {"type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "string"} for k in OUTPUT_NAMES}},
        "sweep": {"type": "object", "additionalProperties": False, "required": ["family", "phi0"],
                  "properties": {"family": _FAMILY, "phi0": {"type": "array", "items": {"type": "number"}}}},
        "grid": {"type": "object", "additionalProperties": False, "required": ["lo", "hi", "shape"],
                 "properties": {"lo": _VEC3, "hi": _VEC3,
                                "shape": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                          "minItems": 3, "maxItems": 3},
                                "strain": {"type": "boolean"}}},
    },
}


@dataclass
class Scenario:
    """A validated scenario file.

    ``config`` is None for sweep-only scenarios; ``ambient`` defaults to a
    unit-rate shear (E_xy = E_yx = 1/2).
    """

    config: ParticleConfig | None
    ambient: AmbientField
    options: SolverOptions
    seed: int | None = None
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    sweep: dict | None = None
    grid: dict | None = None
    description: str = ""


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from None


def parse_json(text: str, source: str = "<input>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}", exc.lineno, exc.colno) from None


def _default_ambient():
    return ambient_from_dict({"type": "linear_strain", "E": [[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]]})


def build_config(data: dict, seed: int | None) -> ParticleConfig:
    if "generator" not in data:
        return ParticleConfig.from_dict(data)
    if seed is None:
        raise InvalidInputError("'seed' is required whenever a generator is used")
    gen = data["generator"]
    if gen["kind"] == "lattice":
        return generate_lattice(gen["n_per_side"], gen["spacing"], gen["radius"])
    box = Box(tuple(gen["box"]["lo"]), tuple(gen["box"]["hi"]))
    return generate_poisson_disk(gen["count"], box, gen["min_gap"], gen["radius"], seed)


def scenario_from_dict(data, source: str = "<input>") -> Scenario:
    """Validate against :data:`SCENARIO_SCHEMA` and build the scenario objects."""
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"{source}: schema violation at {where}: {exc.message}") from None
    seed = data.get("seed")
    cfg = build_config(data["config"], seed) if "config" in data else None
    ambient = ambient_from_dict(data["ambient"]) if "ambient" in data else _default_ambient()
    options = SolverOptions.from_dict(data.get("solver", {}))
    sweep = data.get("sweep")
    if sweep is not None and seed is None:
        raise InvalidInputError("'seed' is required whenever a generator is used")
    outputs = dict(DEFAULT_OUTPUTS)
    outputs.update(data.get("outputs", {}))
    return Scenario(cfg, ambient, options, seed, outputs, sweep, data.get("grid"), data.get("description", ""))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(parse_json(read_text(path), str(path)), str(path))


# ----------------------------------------------------------------- output

def atomic_write_text(path, text: str):
    """Write via a temporary file in the target directory and rename over the target."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def residual_rows(report):
    for k, (r, rs, rm) in enumerate(zip(report.residuals, report.strain_residuals, report.moment_residuals)):
        yield k, r, rs, rm


RESIDUAL_HEADER = ("k", "residual", "strain_residual", "moment_residual")


def grid_csv_text(sample: GridSample) -> str:
    """Grid rows; a ``flag`` column is appended only when some row is flagged."""
    header = list(sample.columns)
    rows = sample.rows.tolist()
    if sample.any_flagged:
        header.append("flag")
        rows = [r + [int(f)] for r, f in zip(rows, sample.flags)]
    return csv_text(header, rows)


# ------------------------------------------------------ field round trip

def field_to_dict(fld: FlowField) -> dict:
    out = {
        "ambient": fld.ambient.to_dict(),
        "particles": [{"center": c.tolist(), "radius": float(r), "dipole": d.tolist()}
                      for c, r, d in zip(fld.centers, fld.radii, fld.dipoles)],
    }
    if fld.collocation is not None:
        for p, c, q in zip(out["particles"], fld.collocation, fld.interior):
            p["collocation"] = c.tolist()
            p["interior"] = q.tolist()
    if fld.rigid is not None:
        for p, rg in zip(out["particles"], fld.rigid):
            p["rigid"] = rg.tolist()
    return out


def field_from_dict(data: dict) -> FlowField:
    if not isinstance(data, dict) or set(data) != {"ambient", "particles"}:
        raise InvalidInputError("field file needs exactly 'ambient' and 'particles'")
    try:
        return _field_from_parts(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"malformed field file: {exc}") from None


def _field_from_parts(data):
    parts = data["particles"]
    centers = [p["center"] for p in parts]
    radii = [p["radius"] for p in parts]
    dip = [p["dipole"] for p in parts]
    coll = interior = rigid = None
    if parts and "collocation" in parts[0]:
        coll = [p["collocation"] for p in parts]
        interior = [p["interior"] for p in parts]
    if parts and "rigid" in parts[0]:
        rigid = [p["rigid"] for p in parts]
    n = len(parts)
    return FlowField(ambient_from_dict(data["ambient"]), np.reshape(centers, (n, 3)), radii,
                     np.reshape(dip, (n, 3, 3)), coll, interior, rigid)
