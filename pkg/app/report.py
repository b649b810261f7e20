"""
Sweep report files: envelope, tracks, overlay and accuracy CSV, report JSON and SVG charts.

Output is a pure function of the report: floats are written with repr(),
JSON keys are sorted, and NaN becomes an empty CSV cell or JSON null.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence

from .charts import envelope_chart, tracks_chart
from .errors import InputError, IoFailure
from .json_schemas import REPORT_SCHEMA, validate_json
from .sweep import AccuracyEntry, ObjectTrack, OverlayRow, SweepReport
from .telemetry.events import log_event, to_jsonable

logger = logging.getLogger("app.report")

FORMATS = ("csv", "json", "svg")
ENVELOPE_COLUMNS = [
    "k",
    "target_mean",
    "target_std",
    "nontarget_mean",
    "nontarget_std",
    "roi_count",
    "confirmed",
    "false",
    "wall_ms",
]
TRACK_COLUMNS = ["object_id", "k", "matched", "line", "sample", "peak_score", "probability", "spectral_fit", "best_label"]
ACCURACY_COLUMNS = ["k", "planted", "detected", "detection_rate", "unmatched_rois"]
OVERLAY_COLUMNS = ["k", "target", "roi_id", "line", "sample", "on_reference"]


def _num(v: Optional[float]) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def parse_formats(text: str) -> List[str]:
    formats = [f.strip().lower() for f in text.split(",") if f.strip()]
    unknown = [f for f in formats if f not in FORMATS]
    if unknown or not formats:
        raise InputError(f"unknown report format(s) {unknown or text!r}; choose from {','.join(FORMATS)}")
    return formats


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def envelope_rows(report: SweepReport) -> List[List[str]]:
    return [
        [
            str(e.k),
            _num(e.target_mean),
            _num(e.target_std),
            _num(e.nontarget_mean),
            _num(e.nontarget_std),
            str(e.roi_count),
            str(e.confirmed),
            str(e.false),
            f"{e.wall_ms:.3f}",
        ]
        for e in report.per_k
    ]


def track_rows(tracks: Sequence[ObjectTrack]) -> List[List[str]]:
    rows = []
    for t in tracks:
        for h in t.per_k_hits:
            rows.append(
                [
                    str(t.object_id),
                    str(h.k),
                    "true" if h.matched else "false",
                    "" if h.roi_center is None else str(h.roi_center[0]),
                    "" if h.roi_center is None else str(h.roi_center[1]),
                    _num(h.peak_score),
                    _num(h.probability),
                    _num(h.spectral_fit),
                    h.best_label or "",
                ]
            )
    return rows


def overlay_rows(overlay: Sequence[OverlayRow]) -> List[List[str]]:
    return [
        [str(o.k), o.target_name, str(o.roi_id), str(o.center[0]), str(o.center[1]), "true" if o.on_reference else "false"]
        for o in overlay
    ]


def _track_docs(tracks: Sequence[ObjectTrack]) -> List[Dict[str, Any]]:
    return [
        {
            "object_id": t.object_id,
            "target_name": t.target_name,
            "kind": t.kind,
            "reference_center": list(t.reference_center),
            "hits": [
                {
                    "k": h.k,
                    "matched": h.matched,
                    "center": None if h.roi_center is None else list(h.roi_center),
                    "peak_score": h.peak_score,
                    "probability": h.probability,
                    "spectral_fit": h.spectral_fit,
                    "best_label": h.best_label,
                }
                for h in t.per_k_hits
            ],
        }
        for t in tracks
    ]


def report_document(
    report: SweepReport,
    tracks: Sequence[ObjectTrack],
    accuracy: Optional[Sequence[AccuracyEntry]] = None,
    *,
    nontarget_tracks: Sequence[ObjectTrack] = (),
    overlay: Sequence[OverlayRow] = (),
) -> Dict[str, Any]:
    doc = {
        "bands": report.bands,
        "usable_rank": report.usable_rank,
        "reference_k": report.reference_k,
        "targets": list(report.targets),
        "grid": [e.k for e in report.per_k],
        "config": dict(report.config),
        "per_k": [
            {
                "k": e.k,
                "target_mean": e.target_mean,
                "target_std": e.target_std,
                "nontarget_mean": e.nontarget_mean,
                "nontarget_std": e.nontarget_std,
                "roi_count": e.roi_count,
                "confirmed": e.confirmed,
                "false": e.false,
                "wall_ms": round(e.wall_ms, 3),
                "explained_variance": e.explained_variance,
                "off_reference": e.off_reference,
                "failure": None if e.failure is None else {"type": e.failure[0], "message": e.failure[1]},
            }
            for e in report.per_k
        ],
        "tracks": _track_docs(tracks),
        "nontarget_tracks": _track_docs(nontarget_tracks),
        "overlay": [
            {"k": o.k, "target": o.target_name, "roi_id": o.roi_id, "center": list(o.center), "on_reference": o.on_reference}
            for o in overlay
        ],
        "accuracy": None
        if accuracy is None
        else [
            {
                "k": a.k,
                "planted": a.planted,
                "detected": a.detected,
                "detection_rate": a.detection_rate,
                "unmatched_rois": a.unmatched_rois,
            }
            for a in accuracy
        ],
    }
    doc = to_jsonable(doc)
    validate_json(doc, REPORT_SCHEMA)
    return doc


def emit_report(
    report: SweepReport,
    tracks: Sequence[ObjectTrack],
    out_dir: str,
    formats: Sequence[str] = FORMATS,
    accuracy: Optional[Sequence[AccuracyEntry]] = None,
    *,
    nontarget_tracks: Optional[Sequence[ObjectTrack]] = None,
    overlay: Optional[Sequence[OverlayRow]] = None,
) -> List[str]:
    """Write the requested report formats into out_dir; returns the written paths.

    nontarget_tracks.csv and overlay.csv are written only when those tables are given.
    """
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise InputError(f"unknown report format(s) {unknown}; choose from {','.join(FORMATS)}")
    written: List[str] = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        if "csv" in formats:
            path = os.path.join(out_dir, "envelope.csv")
            _write_csv(path, ENVELOPE_COLUMNS, envelope_rows(report))
            written.append(path)
            path = os.path.join(out_dir, "tracks.csv")
            _write_csv(path, TRACK_COLUMNS, track_rows(tracks))
            written.append(path)
            if nontarget_tracks is not None:
                path = os.path.join(out_dir, "nontarget_tracks.csv")
                _write_csv(path, TRACK_COLUMNS, track_rows(nontarget_tracks))
                written.append(path)
            if overlay is not None:
                path = os.path.join(out_dir, "overlay.csv")
                _write_csv(path, OVERLAY_COLUMNS, overlay_rows(overlay))
                written.append(path)
            if accuracy is not None:
                path = os.path.join(out_dir, "accuracy.csv")
                _write_csv(
                    path,
                    ACCURACY_COLUMNS,
                    [[str(a.k), str(a.planted), str(a.detected), _num(a.detection_rate), str(a.unmatched_rois)] for a in accuracy],
                )
                written.append(path)
        if "json" in formats:
            path = os.path.join(out_dir, "report.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump(
                    report_document(report, tracks, accuracy, nontarget_tracks=nontarget_tracks or (), overlay=overlay or ()),
                    f,
                    indent=2,
                    sort_keys=True,
                )
                f.write("\n")
            written.append(path)
        if "svg" in formats:
            path = os.path.join(out_dir, "envelope.svg")
            envelope_chart(report, path)
            written.append(path)
            path = os.path.join(out_dir, "tracks.svg")
            tracks_chart(tracks, [e.k for e in report.per_k], path, nontarget_tracks or ())
            written.append(path)
    except OSError as e:
        raise IoFailure(f"cannot write report into {out_dir}: {e}")
    log_event(logger, "report_written", out_dir=out_dir, files=[os.path.basename(p) for p in written])
    return written


__all__ = [
    "FORMATS",
    "ENVELOPE_COLUMNS",
    "TRACK_COLUMNS",
    "ACCURACY_COLUMNS",
    "OVERLAY_COLUMNS",
    "parse_formats",
    "envelope_rows",
    "track_rows",
    "overlay_rows",
    "report_document",
    "emit_report",
]
