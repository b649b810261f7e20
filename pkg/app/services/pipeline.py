"""
Detection pipeline shared by the CLI and the HTTP service.

Loads cube/library/mask, obtains the scene's full-rank whitening model
(from the model store when possible), and runs detect, identify or a full
rank sweep. No FastAPI or argparse dependency.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

from ..config import DetectionSettings, IdentifySettings, SweepSettings
from ..cube_io import (
    BandMask,
    HyperCube,
    SpectralLibrary,
    apply_band_mask,
    load_band_mask,
    load_cube,
    load_spectral_library,
    mask_library,
)
from ..detect import AceScoreMap, RoiRecord, ace_map, extract_rois
from ..errors import ModelFormatError
from ..identify import IdentificationResult, identify
from ..model_store import cube_key
from ..pca import (
    WhiteningModel,
    compute_stats,
    dump_whitening_model,
    eigendecompose,
    full_whitening,
    parse_whitening_model,
    truncate,
    whiten,
    whiten_cube,
)
from ..scene_synth import GroundTruth
from ..sweep import (
    AccuracyEntry,
    ObjectTrack,
    SweepGrid,
    SweepResult,
    check_library,
    ground_truth_accuracy,
    run_sweep,
    track_nontargets,
    track_objects,
)
from ..telemetry.events import log_event

logger = logging.getLogger("app.services.pipeline")


@dataclass(frozen=True)
class SceneInputs:
    cube: HyperCube
    library: SpectralLibrary
    key: Optional[str] = None


@dataclass(frozen=True)
class DetectOutcome:
    score_map: AceScoreMap
    rois: List[RoiRecord]


@dataclass(frozen=True)
class IdentifyOutcome:
    score_map: AceScoreMap
    rois: List[RoiRecord]
    results: List[IdentificationResult]


@dataclass(frozen=True)
class SweepOutcome:
    result: SweepResult
    tracks: List[ObjectTrack]
    accuracy: Optional[List[AccuracyEntry]] = field(default=None)
    nontarget_tracks: List[ObjectTrack] = field(default_factory=list)


class PipelineService:
    def __init__(self, store: Any = None) -> None:
        self._store = store

    # -------- inputs --------
    def load_inputs(
        self,
        cube_path: str,
        library_path: str,
        *,
        mask_path: Optional[str] = None,
        use_bbl: bool = False,
    ) -> SceneInputs:
        cube = load_cube(cube_path)
        library = load_spectral_library(library_path)
        mask: Optional[BandMask] = None
        if mask_path:
            mask = load_band_mask(mask_path)
        elif use_bbl and cube.bad_band_list is not None:
            mask = BandMask.from_bad_band_list(cube.bad_band_list)
        if mask is not None:
            sensor_bands = cube.bands
            cube = apply_band_mask(cube, mask)
            # libraries on the full sensor grid get the same mask; masked ones pass through
            if library.wavelengths.size == sensor_bands:
                library = mask_library(library, mask)
        key = None
        if self._store is not None:
            key = cube_key(cube_path, mask_path) + (":bbl" if use_bbl and mask_path is None else "")
        return SceneInputs(cube=cube, library=library, key=key)

    # -------- model --------
    def whitening_model(self, inputs: SceneInputs) -> WhiteningModel:
        """Full-rank whitening model for the scene, cached as HSWM bytes when a store is set."""
        if self._store is not None and inputs.key:
            blob = self._store.get(inputs.key)
            if blob:
                try:
                    model = parse_whitening_model(blob)
                    if model.bands == inputs.cube.bands:
                        log_event(logger, "model_cache_hit", key=inputs.key[:16], rank=model.rank)
                        return model
                except ModelFormatError as e:
                    logger.warning("discarding cached model %s: %s", inputs.key[:16], e.message)
            log_event(logger, "model_cache_miss", key=inputs.key[:16])
        stats = compute_stats(inputs.cube)
        model = full_whitening(eigendecompose(stats), stats.mean)
        if self._store is not None and inputs.key:
            self._store.put(inputs.key, dump_whitening_model(model))
        return model

    # -------- operations --------
    def detect(
        self,
        inputs: SceneInputs,
        target: str,
        k: int,
        settings: Optional[DetectionSettings] = None,
    ) -> DetectOutcome:
        return self._detect(inputs, target, truncate(self.whitening_model(inputs), k), settings)

    def _detect(
        self,
        inputs: SceneInputs,
        target: str,
        model: WhiteningModel,
        settings: Optional[DetectionSettings],
    ) -> DetectOutcome:
        settings = settings or DetectionSettings()
        check_library(inputs.cube, inputs.library, [target])
        score_map = ace_map(
            whiten_cube(model, inputs.cube),
            whiten(model, inputs.library.get(target).spectrum),
            target,
            squared=settings.squared,
            workers=settings.workers,
            chunk_rows=settings.chunk_rows,
        )
        rois = extract_rois(score_map, inputs.cube, settings.threshold, settings.cap, settings.order)
        return DetectOutcome(score_map=score_map, rois=rois)

    def identify(
        self,
        inputs: SceneInputs,
        target: str,
        k: int,
        detection: Optional[DetectionSettings] = None,
        settings: Optional[IdentifySettings] = None,
    ) -> IdentifyOutcome:
        settings = settings or IdentifySettings()
        model = truncate(self.whitening_model(inputs), k)
        found = self._detect(inputs, target, model, detection)
        results = [
            identify(
                roi,
                found.score_map,
                inputs.cube,
                inputs.library,
                model,
                settings.p_min,
                settings.f_min,
                inner=settings.inner,
                outer=settings.outer,
                max_ace=settings.max_ace,
                min_samples=settings.min_background,
            )
            for roi in found.rois
        ]
        return IdentifyOutcome(score_map=found.score_map, rois=found.rois, results=results)

    def sweep(
        self,
        inputs: SceneInputs,
        targets: Sequence[str],
        grid: Optional[SweepGrid] = None,
        settings: Optional[SweepSettings] = None,
        truth: Optional[GroundTruth] = None,
    ) -> SweepOutcome:
        settings = settings or SweepSettings()
        result = run_sweep(
            inputs.cube,
            inputs.library,
            targets,
            grid,
            settings,
            model=self.whitening_model(inputs),
        )
        tracks = track_objects(result.runs, result.grid, settings.radius, settings.metric)
        others = track_nontargets(result.runs, result.grid, settings.radius, settings.metric, first_id=len(tracks) + 1)
        accuracy = None
        if truth is not None:
            accuracy = ground_truth_accuracy(result.runs, truth, targets, settings.radius, settings.metric)
        return SweepOutcome(result=result, tracks=tracks, accuracy=accuracy, nontarget_tracks=others)


__all__ = ["SceneInputs", "DetectOutcome", "IdentifyOutcome", "SweepOutcome", "PipelineService"]
