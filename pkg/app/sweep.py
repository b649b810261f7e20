"""
Rank sweep: detection and identification across numbers of retained PCs.

One eigendecomposition is computed per scene; every grid point whitens with
the first k columns of the same full-rank transform. Per-k results are
reduced in grid order, so reports do not depend on execution timing (apart
from the optional wall-time column).
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import DetectionSettings, SweepSettings
from .cube_io import HyperCube, SpectralLibrary, match_grid
from .detect import RoiRecord, ace_map, extract_rois
from .errors import GridMismatch, InputError, InvalidGrid, NumericalError
from .identify import NON_TARGET, TARGET, IdentificationResult, identify
from .pca import (
    WhiteningModel,
    compute_stats,
    eigendecompose,
    explained_variance,
    full_whitening,
    truncate,
    whiten,
    whiten_cube,
)
from .scene_synth import GroundTruth
from .telemetry.events import log_event, stopwatch

logger = logging.getLogger("app.sweep")

METRICS = ("chebyshev", "euclidean")
_GRID_RANGE = re.compile(r"^\s*(\d+)\s*:\s*(\d+)\s*(?::\s*(\d+)\s*)?$")


@dataclass(frozen=True)
class SweepGrid:
    ks: Tuple[int, ...]

    def __post_init__(self) -> None:
        ks = tuple(int(k) for k in self.ks)
        if not ks:
            raise InvalidGrid("sweep grid is empty")
        if ks[0] < 1:
            raise InvalidGrid(f"grid ranks must be >= 1, got {ks[0]}")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise InvalidGrid(f"grid must be strictly increasing: {list(ks)}")
        object.__setattr__(self, "ks", ks)

    def __len__(self) -> int:
        return len(self.ks)


def default_grid(bands: int) -> SweepGrid:
    """5, 10, ..., floor(bands/5)*5; a single full-rank point for fewer than 5 bands."""
    top = (bands // 5) * 5
    if top < 5:
        return SweepGrid((bands,))
    return SweepGrid(tuple(range(5, top + 1, 5)))


def parse_grid(text: str) -> SweepGrid:
    """`start:stop[:step]` (stop inclusive) or a comma-separated list of ranks."""
    m = _GRID_RANGE.match(text)
    if m:
        start, stop = int(m.group(1)), int(m.group(2))
        step = int(m.group(3)) if m.group(3) else 1
        if step < 1 or stop < start:
            raise InvalidGrid(f"invalid grid range {text!r}")
        return SweepGrid(tuple(range(start, stop + 1, step)))
    try:
        return SweepGrid(tuple(int(tok) for tok in text.split(",") if tok.strip()))
    except ValueError:
        raise InvalidGrid(f"cannot parse grid {text!r}; use start:stop:step or a comma list")


@dataclass(frozen=True)
class Detection:
    target_name: str
    roi: RoiRecord
    result: IdentificationResult


@dataclass(frozen=True)
class KRun:
    k: int
    detections: Tuple[Detection, ...] = ()
    failure: Optional[Tuple[str, str]] = None
    wall_ms: float = 0.0

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def for_target(self, target_name: str) -> List[Detection]:
        return [d for d in self.detections if d.target_name == target_name]


@dataclass(frozen=True)
class KEntry:
    k: int
    target_mean: float
    target_std: float
    nontarget_mean: float
    nontarget_std: float
    roi_count: int
    confirmed: int
    false: int
    wall_ms: float
    explained_variance: float
    failure: Optional[Tuple[str, str]] = None
    # ROI centers that are below threshold in the same target's full-rank map
    off_reference: int = 0


@dataclass(frozen=True)
class SweepReport:
    per_k: Tuple[KEntry, ...]
    reference_k: Optional[int]
    bands: int
    usable_rank: int
    targets: Tuple[str, ...]
    config: Dict[str, object] = field(default_factory=dict)

    def entry(self, k: int) -> KEntry:
        for e in self.per_k:
            if e.k == k:
                return e
        raise KeyError(k)


@dataclass(frozen=True)
class OverlayRow:
    k: int
    target_name: str
    roi_id: int
    center: Tuple[int, int]
    on_reference: bool


@dataclass(frozen=True)
class SweepResult:
    report: SweepReport
    runs: Tuple[KRun, ...]
    grid: SweepGrid
    overlay: Tuple[OverlayRow, ...] = ()


@dataclass(frozen=True)
class TrackHit:
    k: int
    matched: bool
    roi_center: Optional[Tuple[int, int]] = None
    peak_score: Optional[float] = None
    probability: Optional[float] = None
    spectral_fit: Optional[float] = None
    best_label: Optional[str] = None


@dataclass(frozen=True)
class ObjectTrack:
    object_id: int
    target_name: str
    reference_center: Tuple[int, int]
    per_k_hits: Tuple[TrackHit, ...]
    kind: str = TARGET

    def hit(self, k: int) -> TrackHit:
        for h in self.per_k_hits:
            if h.k == k:
                return h
        raise KeyError(k)


@dataclass(frozen=True)
class AccuracyEntry:
    k: int
    planted: int
    detected: int
    detection_rate: float
    unmatched_rois: int


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def _distance(a: Tuple[int, int], b: Tuple[int, int], metric: str) -> float:
    dl, ds = abs(a[0] - b[0]), abs(a[1] - b[1])
    if metric == "euclidean":
        return math.hypot(dl, ds)
    return float(max(dl, ds))


def check_library(cube: HyperCube, library: SpectralLibrary, target_names: Sequence[str]) -> None:
    if cube.wavelengths_defaulted:
        if library.wavelengths.size != cube.bands:
            raise GridMismatch(f"library has {library.wavelengths.size} wavelengths, cube has {cube.bands} bands")
    else:
        match_grid(library, cube.wavelengths)
    if not target_names:
        raise InputError("at least one target name is required")
    for name in target_names:
        library.get(name)
    if len(set(target_names)) != len(target_names):
        raise InputError(f"target names repeat: {list(target_names)}")


def run_rank(
    k: int,
    full: WhiteningModel,
    cube: HyperCube,
    library: SpectralLibrary,
    target_names: Sequence[str],
    settings: SweepSettings,
) -> Tuple[Detection, ...]:
    """Whiten at rank k, then detect and identify every requested target."""
    det, ids = settings.detection, settings.identify
    model = truncate(full, k)
    wcube = whiten_cube(model, cube)
    out: List[Detection] = []
    for name in target_names:
        t_hat = whiten(model, library.get(name).spectrum)
        score_map = ace_map(
            wcube, t_hat, name, squared=det.squared, workers=det.workers, chunk_rows=det.chunk_rows
        )
        for roi in extract_rois(score_map, cube, det.threshold, det.cap, det.order):
            result = identify(
                roi,
                score_map,
                cube,
                library,
                model,
                ids.p_min,
                ids.f_min,
                inner=ids.inner,
                outer=ids.outer,
                max_ace=ids.max_ace,
                min_samples=ids.min_background,
            )
            out.append(Detection(name, roi, result))
    return tuple(out)


def reference_masks(
    full: WhiteningModel,
    cube: HyperCube,
    library: SpectralLibrary,
    target_names: Sequence[str],
    detection: DetectionSettings,
) -> Dict[str, np.ndarray]:
    """Per target, the pixels at or above threshold in its full-rank score map."""
    wcube = whiten_cube(full, cube)
    masks: Dict[str, np.ndarray] = {}
    for name in target_names:
        try:
            score_map = ace_map(
                wcube,
                whiten(full, library.get(name).spectrum),
                name,
                squared=detection.squared,
                workers=detection.workers,
                chunk_rows=detection.chunk_rows,
            )
            masks[name] = score_map.scores >= detection.threshold
        except NumericalError as e:
            logger.warning("no full-rank reference for %s: %s", name, e.message)
            masks[name] = np.zeros((cube.lines, cube.samples), dtype=bool)
    return masks


def reference_overlay(runs: Sequence[KRun], masks: Dict[str, np.ndarray]) -> List[OverlayRow]:
    """Every ROI center of every run, checked against its target's full-rank mask."""
    rows: List[OverlayRow] = []
    for run in runs:
        for d in run.detections:
            line, sample = d.roi.center
            mask = masks.get(d.target_name)
            on = bool(mask[line, sample]) if mask is not None else False
            rows.append(OverlayRow(run.k, d.target_name, d.roi.id, d.roi.center, on))
    return rows


def _entry(run: KRun, cumulative: np.ndarray, off_reference: int) -> KEntry:
    ev = float(cumulative[run.k - 1]) if run.k <= cumulative.size else math.nan
    if run.failed:
        return KEntry(run.k, math.nan, math.nan, math.nan, math.nan, 0, 0, 0, run.wall_ms, ev, run.failure)
    confirmed = [d.roi.peak_score for d in run.detections if d.result.is_target]
    rejected = [d.roi.peak_score for d in run.detections if not d.result.is_target]
    tm, ts = _mean_std(confirmed)
    nm, ns = _mean_std(rejected)
    return KEntry(
        k=run.k,
        target_mean=tm,
        target_std=ts,
        nontarget_mean=nm,
        nontarget_std=ns,
        roi_count=len(run.detections),
        confirmed=len(confirmed),
        false=len(rejected),
        wall_ms=run.wall_ms,
        explained_variance=ev,
        off_reference=off_reference,
    )


def run_sweep(
    cube: HyperCube,
    library: SpectralLibrary,
    target_names: Sequence[str],
    grid: Optional[SweepGrid] = None,
    settings: Optional[SweepSettings] = None,
    *,
    model: Optional[WhiteningModel] = None,
) -> SweepResult:
    """Detect and identify every target at each grid rank.

    `model` is a precomputed full-rank whitening model (for example from the
    model store); without it the scene is decomposed here, once. Every ROI
    center is also checked against the full-rank above-threshold mask of its
    target (`SweepResult.overlay`, `KEntry.off_reference`).
    """
    settings = settings or SweepSettings()
    target_names = tuple(target_names)
    check_library(cube, library, target_names)
    grid = grid or default_grid(cube.bands)
    if grid.ks[-1] > cube.bands:
        raise InvalidGrid(f"grid rank {grid.ks[-1]} exceeds the {cube.bands} bands of the cube")

    if model is None:
        stats = compute_stats(cube)
        model = full_whitening(eigendecompose(stats), stats.mean)
    elif model.bands != cube.bands:
        raise InputError(f"whitening model has {model.bands} bands; cube has {cube.bands}")
    full = model
    usable = full.rank
    cumulative = explained_variance(full)

    runs: List[KRun] = []
    for k in grid.ks:
        log_event(logger, "sweep_k_start", k=k, targets=list(target_names))
        with stopwatch() as sw:
            try:
                detections = run_rank(k, full, cube, library, target_names, settings)
                failure = None
            except NumericalError as e:
                detections, failure = (), (type(e).__name__, e.message)
        wall_ms = sw.elapsed_ms if settings.record_timing else 0.0
        runs.append(KRun(k=k, detections=detections, failure=failure, wall_ms=wall_ms))
        if failure:
            log_event(logger, "sweep_k_failed", k=k, error=failure[0], message=failure[1], caps={"message": 300})
        else:
            log_event(
                logger,
                "sweep_k_done",
                k=k,
                rois=len(detections),
                confirmed=sum(1 for d in detections if d.result.is_target),
                wall_ms=round(wall_ms, 3),
            )

    overlay = reference_overlay(runs, reference_masks(full, cube, library, target_names, settings.detection))
    off = {k: 0 for k in grid.ks}
    for row in overlay:
        if not row.on_reference:
            off[row.k] += 1

    ok = [r.k for r in runs if not r.failed]
    report = SweepReport(
        per_k=tuple(_entry(r, cumulative, off[r.k]) for r in runs),
        reference_k=max(ok) if ok else None,
        bands=cube.bands,
        usable_rank=usable,
        targets=target_names,
        config={
            "threshold": settings.detection.threshold,
            "cap": settings.detection.cap,
            "order": settings.detection.order,
            "squared": settings.detection.squared,
            "inner": settings.identify.inner,
            "outer": settings.identify.outer,
            "max_ace": settings.identify.max_ace,
            "min_background": settings.identify.min_background,
            "p_min": settings.identify.p_min,
            "f_min": settings.identify.f_min,
            "radius": settings.radius,
            "metric": settings.metric,
        },
    )
    return SweepResult(report=report, runs=tuple(runs), grid=grid, overlay=tuple(overlay))


def _best_match(
    candidates: Sequence[Detection], center: Tuple[int, int], radius: float, metric: str
) -> Optional[Detection]:
    best: Optional[Detection] = None
    for d in candidates:
        if _distance(d.roi.center, center, metric) > radius:
            continue
        if best is None or d.roi.peak_score > best.roi.peak_score:
            best = d
    return best


def _follow(
    objects: Sequence[Detection],
    runs: Sequence[KRun],
    grid: SweepGrid,
    radius: float,
    metric: str,
    kind: str,
    first_id: int,
) -> List[ObjectTrack]:
    by_k = {r.k: r for r in runs}
    tracks: List[ObjectTrack] = []
    for object_id, obj in enumerate(objects, start=first_id):
        hits: List[TrackHit] = []
        for k in grid.ks:
            run = by_k.get(k)
            match = None
            if run is not None and not run.failed:
                match = _best_match(run.for_target(obj.target_name), obj.roi.center, radius, metric)
            if match is None:
                hits.append(TrackHit(k=k, matched=False))
            else:
                hits.append(
                    TrackHit(
                        k=k,
                        matched=True,
                        roi_center=match.roi.center,
                        peak_score=match.roi.peak_score,
                        probability=match.result.probability,
                        spectral_fit=match.result.spectral_fit,
                        best_label=match.result.best_label,
                    )
                )
        tracks.append(ObjectTrack(object_id, obj.target_name, obj.roi.center, tuple(hits), kind))
    return tracks


def _reference_detections(runs: Sequence[KRun], metric: str, confirmed: bool) -> List[Detection]:
    if metric not in METRICS:
        raise InputError(f"match metric must be one of {METRICS}, got {metric!r}")
    ok = [r for r in runs if not r.failed]
    if not ok:
        return []
    reference = max(ok, key=lambda r: r.k)
    return [d for d in reference.detections if d.result.is_target == confirmed]


def track_objects(
    runs: Sequence[KRun], grid: SweepGrid, radius: float = 3, metric: str = "chebyshev"
) -> List[ObjectTrack]:
    """Follow each confirmed target of the reference (highest non-failed k) run across the grid.

    A ROI matches when its center lies within `radius` of the object center in
    the same target's score map; if several match, the highest peak wins.
    """
    objects = _reference_detections(runs, metric, confirmed=True)
    return _follow(objects, runs, grid, radius, metric, TARGET, 1)


def track_nontargets(
    runs: Sequence[KRun], grid: SweepGrid, radius: float = 3, metric: str = "chebyshev", first_id: int = 1
) -> List[ObjectTrack]:
    """Same as track_objects for the reference run's non-target ROIs; ids start at first_id."""
    objects = _reference_detections(runs, metric, confirmed=False)
    return _follow(objects, runs, grid, radius, metric, NON_TARGET, first_id)


def planted_matches(
    run: KRun, truth: GroundTruth, radius: float = 3, metric: str = "chebyshev", confirmed_only: bool = False
) -> Dict[int, bool]:
    """Truth entry index -> whether a ROI in that material's own score map lies within radius."""
    out: Dict[int, bool] = {}
    for i, entry in enumerate(truth.entries):
        if entry.kind != "target":
            continue
        candidates = [d for d in run.for_target(entry.label) if d.result.is_target or not confirmed_only]
        out[i] = _best_match(candidates, entry.center, radius, metric) is not None
    return out


def ground_truth_accuracy(
    runs: Sequence[KRun],
    truth: GroundTruth,
    target_names: Sequence[str],
    radius: float = 3,
    metric: str = "chebyshev",
) -> List[AccuracyEntry]:
    """Per-k detection rate of planted targets and count of ROIs matching no planted object."""
    names = set(target_names)
    planted_idx = [i for i, e in enumerate(truth.entries) if e.kind == "target" and e.label in names]
    out: List[AccuracyEntry] = []
    for run in runs:
        if run.failed:
            out.append(AccuracyEntry(run.k, len(planted_idx), 0, math.nan, 0))
            continue
        matches = planted_matches(run, truth, radius, metric)
        detected = sum(1 for i in planted_idx if matches.get(i))
        unmatched = sum(
            1
            for d in run.detections
            if all(_distance(d.roi.center, e.center, metric) > radius for e in truth.entries)
        )
        rate = detected / len(planted_idx) if planted_idx else math.nan
        out.append(AccuracyEntry(run.k, len(planted_idx), detected, rate, unmatched))
    return out


__all__ = [
    "SweepGrid",
    "default_grid",
    "parse_grid",
    "Detection",
    "KRun",
    "KEntry",
    "SweepReport",
    "SweepResult",
    "TrackHit",
    "ObjectTrack",
    "AccuracyEntry",
    "check_library",
    "run_rank",
    "run_sweep",
    "track_objects",
    "track_nontargets",
    "reference_masks",
    "reference_overlay",
    "OverlayRow",
    "planted_matches",
    "ground_truth_accuracy",
]
