from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class SceneRequest(BaseModel):
    """Server-side input files shared by every detection request."""

    cube: str = Field(min_length=1, description="Path to the ENVI .hdr of the scene cube")
    library: str = Field(min_length=1, description="Path to the spectral library CSV")
    mask: Optional[str] = Field(default=None, description="Optional band mask file (0/1 per band)")
    useBbl: bool = Field(default=False, description="Apply the header's bad band list when no mask is given")


class DetectionOptions(BaseModel):
    """Per-request overrides for DetectionSettings; None keeps the configured default."""

    threshold: Optional[float] = Field(default=None, gt=-1.0, le=1.0)
    cap: Optional[int] = Field(default=None, ge=1)
    order: Optional[str] = Field(default=None, description="score|raster")
    squared: Optional[bool] = None


class IdentifyOptions(BaseModel):
    pMin: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    fMin: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    inner: Optional[int] = Field(default=None, ge=1)
    outer: Optional[int] = Field(default=None, ge=2)
    maxAce: Optional[float] = None


class DetectRequest(SceneRequest, DetectionOptions):
    target: str = Field(min_length=1, description="Library entry to detect")
    k: int = Field(ge=1, description="Number of retained principal components")


class IdentifyRequest(DetectRequest, IdentifyOptions):
    pass


class SweepRequest(SceneRequest, DetectionOptions, IdentifyOptions):
    targets: List[str] = Field(min_length=1, description="Target-kind library entries to sweep")
    grid: Optional[str] = Field(default=None, description="'start:stop[:step]' or comma list; default 5..bands step 5")
    radius: Optional[int] = Field(default=None, ge=0)
    metric: Optional[str] = Field(default=None, description="chebyshev|euclidean")
    truth: Optional[str] = Field(default=None, description="Optional truth.csv for ground-truth accuracy")
    out: Optional[str] = Field(default=None, description="Report directory, relative to or inside REPORT_ROOT")
    formats: Optional[str] = Field(default=None, description="Comma list of csv,json,svg")
    recordTiming: Optional[bool] = None


class RoiOut(BaseModel):
    id: int
    line: int
    sample: int
    peakScore: float
    pixelCount: int


class DetectResponse(BaseModel):
    target: str
    k: int
    lines: int
    samples: int
    rois: List[RoiOut] = Field(default_factory=list)


class IdentificationOut(BaseModel):
    roiId: int
    line: int
    sample: int
    peakScore: float
    bestLabel: str
    probability: float
    spectralFit: float
    decision: str
    flag: str = ""
    stem: str = ""
    perClassProbabilities: Dict[str, float] = Field(default_factory=dict)


class IdentifyResponse(BaseModel):
    target: str
    k: int
    results: List[IdentificationOut] = Field(default_factory=list)


class SweepResponse(BaseModel):
    """Report document (see REPORT_SCHEMA) plus the paths written, if any."""

    report: dict
    files: List[str] = Field(default_factory=list)
