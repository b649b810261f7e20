import os

import pytest
from fastapi.testclient import TestClient

import app.main as m
from app.main import app
from app.model_store import InMemoryModelStore
from app.services.pipeline import PipelineService

client = TestClient(app)


@pytest.fixture
def fresh_pipeline(monkeypatch):
    store = InMemoryModelStore()
    monkeypatch.setattr(m, "PIPELINE", PipelineService(store))
    return store


def _scene(scene_dir, **extra):
    body = {"cube": scene_dir["cube"], "library": scene_dir["library"]}
    body.update(extra)
    return body


def test_healthz_ok():
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_config_keys_present():
    r = client.get("/config")
    assert r.status_code == 200
    data = r.json()
    for key in [
        "detection",
        "identify",
        "sweep",
        "logLevel",
        "allowedOrigins",
        "reportRoot",
        "modelStoreBackend",
        "modelStoreTtlSeconds",
        "reportFormats",
        "debugMode",
    ]:
        assert key in data
    assert data["detection"]["threshold"] == 0.5
    assert data["detection"]["cap"] == 100
    assert data["identify"]["min_background"] == 25
    assert data["sweep"] == {"radius": 3, "metric": "chebyshev", "recordTiming": False}
    assert data["reportFormats"] == ["csv", "json", "svg"]


def test_detect_returns_rois(scene_dir, fresh_pipeline):
    r = client.post("/detect", json=_scene(scene_dir, target="T1", k=20))
    assert r.status_code == 200
    data = r.json()
    assert (data["target"], data["k"], data["lines"], data["samples"]) == ("T1", 20, 48, 48)
    assert data["rois"]
    assert [roi["id"] for roi in data["rois"]] == list(range(1, len(data["rois"]) + 1))
    peaks = [roi["peakScore"] for roi in data["rois"]]
    assert peaks == sorted(peaks, reverse=True)
    assert all(p >= 0.5 for p in peaks)


def test_detect_options_override_defaults(scene_dir, fresh_pipeline):
    r = client.post("/detect", json=_scene(scene_dir, target="T1", k=20, cap=1, threshold=0.3))
    assert r.status_code == 200
    assert len(r.json()["rois"]) == 1


def test_identify_confirms_the_planted_patch(scene_dir, fresh_pipeline):
    r = client.post("/identify", json=_scene(scene_dir, target="T1", k=20))
    assert r.status_code == 200
    results = r.json()["results"]
    near = [x for x in results if max(abs(x["line"] - 12), abs(x["sample"] - 12)) <= 1]
    assert near and near[0]["decision"] == "target"
    assert near[0]["bestLabel"] == "T1"
    assert sum(near[0]["perClassProbabilities"].values()) == pytest.approx(1.0, abs=1e-9)


def test_sweep_writes_report_files(scene_dir, fresh_pipeline, tmp_path, monkeypatch):
    monkeypatch.setattr(m, "REPORT_ROOT", str(tmp_path))
    out = "report"
    body = _scene(
        scene_dir,
        targets=["T1", "T2"],
        grid="10,20",
        truth=scene_dir["truth"],
        out=out,
        formats="csv,json",
        recordTiming=False,
    )
    r = client.post("/sweep", json=body)
    assert r.status_code == 200
    data = r.json()
    assert [os.path.basename(p) for p in data["files"]] == [
        "envelope.csv",
        "tracks.csv",
        "nontarget_tracks.csv",
        "overlay.csv",
        "accuracy.csv",
        "report.json",
    ]
    assert all(os.path.dirname(p) == os.path.realpath(tmp_path / "report") for p in data["files"])
    assert data["report"]["grid"] == [10, 20]
    assert data["report"]["targets"] == ["T1", "T2"]
    assert len(data["report"]["accuracy"]) == 2


def test_sweep_without_out_writes_nothing(scene_dir, fresh_pipeline):
    r = client.post("/sweep", json=_scene(scene_dir, targets=["T1"], grid="20"))
    assert r.status_code == 200
    assert r.json()["files"] == []
    assert r.json()["report"]["accuracy"] is None


def test_unknown_target_is_a_400_with_request_id(scene_dir, fresh_pipeline):
    r = client.post("/detect", json=_scene(scene_dir, target="T9", k=5), headers={"x-request-id": "req-123"})
    assert r.status_code == 400
    err = r.json()["error"]
    assert err["type"] == "UnknownEntry"
    assert err["code"] == 400
    assert err["requestId"] == "req-123"
    assert r.headers["x-request-id"] == "req-123"


def test_rank_too_high_is_a_422(scene_dir, fresh_pipeline):
    r = client.post("/detect", json=_scene(scene_dir, target="T1", k=21))
    assert r.status_code == 422
    assert r.json()["error"]["type"] == "RankTooHigh"


def test_missing_cube_is_a_500(tmp_path, fresh_pipeline):
    r = client.post("/detect", json={"cube": str(tmp_path / "none.hdr"), "library": "x.csv", "target": "T1", "k": 5})
    assert r.status_code == 500
    assert r.json()["error"]["type"] == "IoFailure"


def test_invalid_body_is_a_422(scene_dir):
    r = client.post("/detect", json=_scene(scene_dir, target="T1", k=0))
    assert r.status_code == 422
    err = r.json()["error"]
    assert err["type"] == "RequestValidationError"
    assert any(e["loc"][-1] == "k" for e in err["errors"])


def test_request_id_is_generated_when_absent():
    r = client.get("/healthz")
    assert r.headers.get("x-request-id")


def test_whitening_model_is_cached_after_first_call(scene_dir, fresh_pipeline):
    assert len(fresh_pipeline) == 0
    first = client.post("/detect", json=_scene(scene_dir, target="T1", k=20)).json()
    assert len(fresh_pipeline) == 1
    second = client.post("/detect", json=_scene(scene_dir, target="T1", k=20)).json()
    assert len(fresh_pipeline) == 1
    assert first == second


def test_sweep_refuses_to_write_without_a_report_root(scene_dir, fresh_pipeline, tmp_path, monkeypatch):
    monkeypatch.setattr(m, "REPORT_ROOT", "")
    r = client.post("/sweep", json=_scene(scene_dir, targets=["T1"], grid="20", out=str(tmp_path / "r")))
    assert r.status_code == 400
    assert r.json()["error"]["type"] == "ReportPathRejected"
    assert not (tmp_path / "r").exists()


def test_sweep_refuses_directories_outside_the_report_root(scene_dir, fresh_pipeline, tmp_path, monkeypatch):
    root = tmp_path / "reports"
    root.mkdir()
    monkeypatch.setattr(m, "REPORT_ROOT", str(root))
    for out in (str(tmp_path / "elsewhere"), "../elsewhere"):
        r = client.post("/sweep", json=_scene(scene_dir, targets=["T1"], grid="20", out=out))
        assert r.status_code == 400
        assert r.json()["error"]["type"] == "ReportPathRejected"
    assert not (tmp_path / "elsewhere").exists()


def test_sweep_report_carries_overlay_and_nontarget_tracks(scene_dir, fresh_pipeline):
    r = client.post("/sweep", json=_scene(scene_dir, targets=["T1"], grid="10,20", recordTiming=False))
    assert r.status_code == 200
    report = r.json()["report"]
    rows = report["overlay"]
    assert len(rows) == sum(e["roi_count"] for e in report["per_k"])
    assert all(o["on_reference"] for o in rows if o["k"] == 20)
    assert report["per_k"][1]["off_reference"] == 0
    assert all(t["kind"] == "non-target" for t in report["nontarget_tracks"])
    assert all(t["kind"] == "target" for t in report["tracks"])
