"""JSON schemas for the input documents and a validator that reports field paths."""

from __future__ import annotations

import json
from dataclasses import fields

import jsonschema

from .errors import SchemaError
from .sim import CostModel, WorkloadProfile

_count = {"type": "integer", "minimum": 0}


def _flat(cls, required=(), extra=None) -> dict:
    props = {f.name: dict(_count) for f in fields(cls)}
    props.update(extra or {})
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": cls.__name__,
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


WORKLOAD = _flat(WorkloadProfile)
COST_MODEL = _flat(CostModel, extra={
    "ips": {"type": "integer", "minimum": 1},
    "c_delegate": {"type": "integer", "minimum": 1},
    "el0_percent": {"type": "integer", "minimum": 0, "maximum": 100},
})
MARKERS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MarkerConfig",
    "type": "object",
    "properties": {
        "toggle_pattern": {"type": "string", "minLength": 1},
        "stage_patterns": {
            "type": "object",
            "additionalProperties": {
                "type": "array",
                "prefixItems": [{"type": "string", "minLength": 1},
                                {"enum": ["begin", "end"]}],
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "initially_enabled": {"type": "boolean"},
    },
    "additionalProperties": False,
}

SCHEMAS = {"workload": WORKLOAD, "cost_model": COST_MODEL, "markers": MARKERS}


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            out += f".{extra[0]}"
    return out


def validate(doc, kind: str, source: str = "") -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = f"{source}:{_path(err)}" if source else _path(err)
        raise SchemaError(where, err.message)
    return doc


def load(path, kind: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:$", f"invalid JSON ({exc})") from None
    return validate(doc, kind, str(path))


def load_workload(path) -> WorkloadProfile:
    return WorkloadProfile(**load(path, "workload"))


def load_cost_model(path) -> CostModel:
    doc = load(path, "cost_model")
    try:
        return CostModel(**doc)
    except ValueError as exc:
        raise SchemaError(f"{path}:$", str(exc)) from None
