"""JSON documents: schema validation and conversion to library objects.

Two schemas ship with the package under ``itocap/schemas``: one for obstacle
sets and one for experiment configurations (which embeds the first).
"""

from __future__ import annotations

import copy
import hashlib
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from . import bounds, geometry
from .capacity import KernelSpec
from .errors import DomainError, SchemaError
from .montecarlo import PotentialSpec, SimConfig

SET_SCHEMA_ID = "https://itocap.invalid/set.schema.json"


def _read_schema(name):
    return json.loads(resources.files("itocap").joinpath("schemas").joinpath(name).read_text())


def _embed(node, target_id, replacement):
    if isinstance(node, dict):
        if node.get("$ref") == target_id:
            return copy.deepcopy(replacement)
        return {k: _embed(v, target_id, replacement) for k, v in node.items()}
    if isinstance(node, list):
        return [_embed(v, target_id, replacement) for v in node]
    return node


@lru_cache(maxsize=None)
def _validator(name):
    schema = _read_schema(name)
    if name != "set.schema.json":
        schema = _embed(schema, SET_SCHEMA_ID, _read_schema("set.schema.json"))
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def schema(name: str) -> dict:
    """The schema document ``set`` or ``config`` as shipped."""
    return _read_schema(f"{name}.schema.json")


def _leaves(errors):
    for e in errors:
        if e.context:
            yield from _leaves(e.context)
        else:
            yield e


def validate(document, name: str):
    """Raise :class:`SchemaError` naming the deepest offending field."""
    errors = list(_validator(f"{name}.schema.json").iter_errors(document))
    if errors:
        # inside oneOf alternatives the deepest failure is the most telling one
        err = max(_leaves(errors), key=lambda e: len(e.absolute_path))
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SchemaError(err.message, path)


def canonical(document) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def content_hash(document) -> str:
    return hashlib.sha256(canonical(document).encode()).hexdigest()


# --------------------------------------------------------------------------
# sets


def _primitive(doc, d):
    kind = doc["kind"]

    def vec(key):
        v = doc[key]
        if len(v) != d:
            raise SchemaError(f"{key} has {len(v)} coordinates, set dimension is {d}", key)
        return v

    if kind == "ball":
        return geometry.Ball(vec("center"), doc["radius"])
    if kind == "ellipsoid":
        return geometry.Ellipsoid(vec("center"), doc["matrix"])
    if kind == "box":
        return geometry.Box(vec("corner"), doc["edges"] if "edges" in doc else doc["edge_vectors"])
    if kind == "segment":
        return geometry.Segment(vec("base"), vec("direction"))
    if kind == "sheet":
        return geometry.Sheet(vec("base"), *doc["spans"])
    return geometry.AnnularSector(doc["r_min"], doc["r_max"], doc["theta_min"], doc["theta_max"],
                                  doc.get("center", (0.0, 0.0)))


def set_from_json(doc, base_dir: Path | None = None) -> geometry.SetSpec:
    """Build a :class:`SetSpec` from an explicit, generator or file document."""
    validate(doc, "set")
    if "file" in doc:
        path = Path(doc["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_set(path)
    if "generator" in doc:
        return _generate(doc)
    d = doc["dimension"]
    try:
        prims = tuple(_primitive(p, d) for p in doc["primitives"])
        return geometry.SetSpec(d, prims, doc.get("label", ""))
    except DomainError as exc:
        raise SchemaError(str(exc), "primitives") from exc


def _generate(doc):
    kind = doc["generator"]
    label = doc.get("label")
    cfg = tuple(tuple(pair) for pair in doc["config"]) if "config" in doc else geometry.DEFAULT_CONFIG
    if kind == "fractal_ET":
        s = geometry.gen_fractal_ET(doc["N"], cfg, doc.get("d", 2))
    elif kind == "annular_example":
        s = geometry.gen_annular_example(doc["T_list"], doc.get("thickness", 1.0), cfg)
    else:
        s = geometry.full_slab(doc["T"], doc.get("d", 2))
    return geometry.SetSpec(s.dimension, s.primitives, label) if label else s


def load_set(path) -> geometry.SetSpec:
    path = Path(path)
    return set_from_json(json.loads(path.read_text()), path.parent)


# --------------------------------------------------------------------------
# other sections


def kernel_from_json(doc, d: int) -> KernelSpec:
    doc = doc or {}
    return KernelSpec(d, doc.get("theta"), doc.get("sign", "-"), doc.get("k", 1.0))


def sim_from_json(doc, seed=None, workers=None) -> SimConfig:
    doc = dict(doc or {})
    if seed is not None:
        doc["seed"] = seed
    if workers is not None:
        doc["workers"] = workers
    return SimConfig(**doc)


def potential_from_json(doc, base_dir=None) -> PotentialSpec:
    doc = doc or {}
    pieces = tuple((float(p["constant"]), set_from_json(p["set"], base_dir)) for p in doc.get("pieces", ()))
    prof = doc.get("profile", {})
    radii, values = tuple(prof.get("radii", ())), tuple(prof.get("values", ()))
    return PotentialSpec(pieces, radii, values)


def profile_from_json(doc) -> bounds.ProfileSpec:
    return bounds.ProfileSpec(doc["kind"], dict(doc.get("params", {})), doc.get("clamp_below"))


def section_from_json(doc):
    kind = doc["kind"]
    need = {"interval": ("length",), "rectangle": ("a", "b"), "disk": ("radius",)}[kind]
    missing = [k for k in need if k not in doc]
    if missing:
        raise SchemaError(f"{kind} section needs {missing}", "base")
    if kind == "interval":
        return bounds.Interval(doc["length"])
    if kind == "rectangle":
        return bounds.Rectangle(doc["a"], doc["b"])
    return bounds.Disk(doc["radius"])


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}", "<root>") from exc
    validate(doc, "config")
    return doc
