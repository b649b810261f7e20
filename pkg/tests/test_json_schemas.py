import pytest

from app.errors import InputError
from app.json_schemas import REPORT_SCHEMA, SCENE_SPEC_SCHEMA, SchemaValidationError, validate_json


def _report(**overrides):
    doc = {
        "bands": 20,
        "usable_rank": 20,
        "reference_k": 20,
        "targets": ["T1"],
        "grid": [10, 20],
        "config": {},
        "per_k": [
            {
                "k": 10,
                "target_mean": 0.8,
                "target_std": 0.0,
                "nontarget_mean": None,
                "nontarget_std": None,
                "roi_count": 1,
                "confirmed": 1,
                "false": 0,
                "wall_ms": 0.0,
                "explained_variance": 0.9,
                "failure": None,
            }
        ],
        "tracks": [
            {"object_id": 1, "target_name": "T1", "reference_center": [3, 4], "hits": [{"k": 10, "matched": False}]}
        ],
        "accuracy": None,
    }
    doc.update(overrides)
    return doc


def test_valid_report_passes():
    validate_json(_report(), REPORT_SCHEMA)


@pytest.mark.parametrize(
    "overrides",
    [
        {"bands": 1},
        {"grid": [0]},
        {"reference_k": "20"},
        {"tracks": [{"object_id": 1, "target_name": "T1", "reference_center": [3], "hits": []}]},
        {"accuracy": [{"k": 5, "planted": 2}]},
    ],
)
def test_invalid_reports_are_rejected(overrides):
    with pytest.raises(SchemaValidationError):
        validate_json(_report(**overrides), REPORT_SCHEMA)


def test_missing_per_k_field_names_its_path():
    doc = _report()
    del doc["per_k"][0]["roi_count"]
    with pytest.raises(SchemaValidationError) as ei:
        validate_json(doc, REPORT_SCHEMA)
    assert "roi_count" in ei.value.message
    assert "'per_k', 0" in ei.value.message


def test_scene_spec_schema():
    validate_json({"lines": 8, "samples": 8, "bands": 12, "targets": [{"material": "T1", "center": [2, 2]}]}, SCENE_SPEC_SCHEMA)
    for bad in (
        {"lines": 8, "samples": 8},
        {"lines": 8, "samples": 8, "bands": 4},
        {"lines": 8, "samples": 8, "bands": 12, "targets": [{"material": "T1", "center": [2, 2], "abundance": 0}]},
        {"lines": 8, "samples": 8, "bands": 12, "targets": [{"material": "T1", "center": [2, 2], "shape": "disc"}]},
    ):
        with pytest.raises(SchemaValidationError):
            validate_json(bad, SCENE_SPEC_SCHEMA)


def test_schema_errors_are_input_errors():
    assert issubclass(SchemaValidationError, InputError)
    assert SchemaValidationError("x").exit_code == 2
