"""
JSON Schemas and validation helpers for scene specs and sweep reports.
"""
from __future__ import annotations

from typing import Any, Dict

try:
    from jsonschema import Draft7Validator
except Exception:  # pragma: no cover - import error path
    Draft7Validator = None  # type: ignore

from .errors import InputError

_NUMBER_OR_NULL = {"type": ["number", "null"]}
_PAIR = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}

_PLACEMENT = {
    "type": "object",
    "properties": {
        "material": {"type": "string", "minLength": 1},
        "center": _PAIR,
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "abundance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
    "required": ["material", "center"],
    "additionalProperties": False,
}

SCENE_SPEC_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "lines": {"type": "integer", "minimum": 1},
        "samples": {"type": "integer", "minimum": 1},
        "bands": {"type": "integer", "minimum": 10},
        "wavelength_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "background_endmembers": {"type": "integer", "minimum": 1},
        "noise_sigma": {"type": "number", "minimum": 0},
        "variability_sigma": {"type": "number", "minimum": 0},
        "variability_order": {"type": "integer", "minimum": 1},
        "target_materials": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "confuser_materials": {"type": "object", "additionalProperties": {"type": "string"}},
        "targets": {"type": "array", "items": _PLACEMENT},
        "confusers": {"type": "array", "items": _PLACEMENT},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["lines", "samples", "bands"],
    "additionalProperties": False,
}

_FAILURE = {
    "type": ["object", "null"],
    "properties": {"type": {"type": "string"}, "message": {"type": "string"}},
    "required": ["type", "message"],
}

_PER_K = {
    "type": "object",
    "properties": {
        "k": {"type": "integer", "minimum": 1},
        "target_mean": _NUMBER_OR_NULL,
        "target_std": _NUMBER_OR_NULL,
        "nontarget_mean": _NUMBER_OR_NULL,
        "nontarget_std": _NUMBER_OR_NULL,
        "roi_count": {"type": "integer", "minimum": 0},
        "confirmed": {"type": "integer", "minimum": 0},
        "false": {"type": "integer", "minimum": 0},
        "wall_ms": {"type": "number", "minimum": 0},
        "explained_variance": _NUMBER_OR_NULL,
        "off_reference": {"type": "integer", "minimum": 0},
        "failure": _FAILURE,
    },
    "required": [
        "k",
        "target_mean",
        "target_std",
        "nontarget_mean",
        "nontarget_std",
        "roi_count",
        "confirmed",
        "false",
        "wall_ms",
        "failure",
    ],
}

_HIT = {
    "type": "object",
    "properties": {
        "k": {"type": "integer"},
        "matched": {"type": "boolean"},
        "center": {"anyOf": [_PAIR, {"type": "null"}]},
        "peak_score": _NUMBER_OR_NULL,
        "probability": _NUMBER_OR_NULL,
        "spectral_fit": _NUMBER_OR_NULL,
        "best_label": {"type": ["string", "null"]},
    },
    "required": ["k", "matched"],
}

_TRACK = {
    "type": "object",
    "properties": {
        "object_id": {"type": "integer", "minimum": 1},
        "target_name": {"type": "string"},
        "kind": {"enum": ["target", "non-target"]},
        "reference_center": _PAIR,
        "hits": {"type": "array", "items": _HIT},
    },
    "required": ["object_id", "target_name", "reference_center", "hits"],
}

REPORT_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "bands": {"type": "integer", "minimum": 2},
        "usable_rank": {"type": "integer", "minimum": 0},
        "reference_k": {"type": ["integer", "null"]},
        "targets": {"type": "array", "items": {"type": "string"}},
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "config": {"type": "object"},
        "per_k": {"type": "array", "items": _PER_K},
        "tracks": {"type": "array", "items": _TRACK},
        "nontarget_tracks": {"type": "array", "items": _TRACK},
        "overlay": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "k": {"type": "integer", "minimum": 1},
                    "target": {"type": "string"},
                    "roi_id": {"type": "integer", "minimum": 1},
                    "center": _PAIR,
                    "on_reference": {"type": "boolean"},
                },
                "required": ["k", "target", "roi_id", "center", "on_reference"],
            },
        },
        "accuracy": {
            "type": ["array", "null"],
            "items": {
                "type": "object",
                "properties": {
                    "k": {"type": "integer"},
                    "planted": {"type": "integer", "minimum": 0},
                    "detected": {"type": "integer", "minimum": 0},
                    "detection_rate": _NUMBER_OR_NULL,
                    "unmatched_rois": {"type": "integer", "minimum": 0},
                },
                "required": ["k", "planted", "detected", "detection_rate", "unmatched_rois"],
            },
        },
    },
    "required": ["bands", "usable_rank", "reference_k", "targets", "grid", "per_k", "tracks"],
}


class SchemaValidationError(InputError):
    pass


def validate_json(instance: Dict[str, Any], schema: Dict[str, Any]) -> None:
    """Validate instance against schema; raise SchemaValidationError on failure."""
    if Draft7Validator is None:
        # If jsonschema is not installed, fail closed so we notice in tests.
        raise SchemaValidationError("jsonschema not available")
    v = Draft7Validator(schema)
    errors = sorted(v.iter_errors(instance), key=lambda e: [str(p) for p in e.path])
    if errors:
        msgs = [f"{list(e.path)}: {e.message}" for e in errors]
        raise SchemaValidationError("; ".join(msgs))


__all__ = ["SCENE_SPEC_SCHEMA", "REPORT_SCHEMA", "SchemaValidationError", "validate_json"]
