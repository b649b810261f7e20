"""
Environment-driven defaults for detection, identification and sweeps.

Values are read once at import; CLI flags and request fields override them by
building new settings objects with dataclasses.replace().
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


# Detection
ACE_THRESHOLD = float(os.getenv("ACE_THRESHOLD", "0.5"))
ROI_CAP = int(os.getenv("ROI_CAP", "100"))
# "score" keeps the strongest ROIs; "raster" keeps the first ones in scan order
ROI_ORDER = os.getenv("ROI_ORDER", "score").lower()
ACE_SQUARED = _env_bool("ACE_SQUARED", "false")
ACE_WORKERS = int(os.getenv("ACE_WORKERS", "1"))
ACE_CHUNK_ROWS = int(os.getenv("ACE_CHUNK_ROWS", "64"))

# Identification
BG_INNER = int(os.getenv("BG_INNER", "5"))
BG_OUTER = int(os.getenv("BG_OUTER", "15"))
BG_MAX_ACE = float(os.getenv("BG_MAX_ACE", "0.2"))
BG_MIN_SAMPLES = int(os.getenv("BG_MIN_SAMPLES", "25"))
ID_P_MIN = float(os.getenv("ID_P_MIN", "0.5"))
ID_F_MIN = float(os.getenv("ID_F_MIN", "0.5"))

# Sweep / tracking
TRACK_RADIUS = int(os.getenv("TRACK_RADIUS", "3"))
TRACK_METRIC = os.getenv("TRACK_METRIC", "chebyshev").lower()
# wall_ms makes report files differ between otherwise identical runs
RECORD_TIMING = _env_bool("RECORD_TIMING", "false")

# Model store (full-rank whitening cache used by the HTTP service)
MODEL_STORE_BACKEND = os.getenv("MODEL_STORE_BACKEND", "memory").lower()
MODEL_STORE_TTL_SECONDS = int(os.getenv("MODEL_STORE_TTL_SECONDS", "3600"))
REDIS_URL = os.getenv("REDIS_URL")
REDIS_HOST = os.getenv("REDIS_HOST")
REDIS_PORT = int(os.getenv("REDIS_PORT", "6379"))
REDIS_DB = int(os.getenv("REDIS_DB", "0"))
REDIS_PASSWORD = os.getenv("REDIS_PASSWORD")
REDIS_PREFIX = os.getenv("REDIS_PREFIX", "hswm:")

LOG_LEVEL = os.getenv("LOG_LEVEL", "info").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


@dataclass(frozen=True)
class DetectionSettings:
    threshold: float = ACE_THRESHOLD
    cap: int = ROI_CAP
    order: str = ROI_ORDER
    squared: bool = ACE_SQUARED
    workers: int = ACE_WORKERS
    chunk_rows: int = ACE_CHUNK_ROWS


@dataclass(frozen=True)
class IdentifySettings:
    inner: int = BG_INNER
    outer: int = BG_OUTER
    max_ace: float = BG_MAX_ACE
    min_background: int = BG_MIN_SAMPLES
    p_min: float = ID_P_MIN
    f_min: float = ID_F_MIN


@dataclass(frozen=True)
class SweepSettings:
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    identify: IdentifySettings = field(default_factory=IdentifySettings)
    radius: int = TRACK_RADIUS
    metric: str = TRACK_METRIC
    record_timing: bool = RECORD_TIMING


def configure_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


__all__ = [
    "DetectionSettings",
    "IdentifySettings",
    "SweepSettings",
    "configure_logging",
]
