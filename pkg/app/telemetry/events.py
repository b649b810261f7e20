"""
Structured JSON event logging and wall-clock timing.

Every stage reports progress as one JSON line per event so sweep logs can be
grepped and loaded without a parser for free text. Numpy values are converted
to JSON-native types; non-finite floats are written as null.
"""
from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

import numpy as np


def truncate_for_log(s: Any, cap: int) -> str:
    """Return str(s) capped at `cap` characters; never raises."""
    try:
        if not isinstance(s, str):
            s = str(s)
        return s if len(s) <= cap else s[:cap]
    except Exception:
        return ""


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats for json.dumps."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    return value


def log_event(logger, event_name: str, *, caps: Optional[Dict[str, int]] = None, **fields: Any) -> None:
    """Emit a single JSON event line via logger.info().

    caps maps field names to a maximum string length.
    """
    payload: Dict[str, Any] = {"event": event_name}
    payload.update(to_jsonable(fields))
    if caps:
        for key, limit in caps.items():
            if payload.get(key) is not None:
                payload[key] = truncate_for_log(payload[key], int(limit))
    try:
        logger.info(json.dumps(payload, sort_keys=True))
    except (TypeError, ValueError):
        logger.info(str(payload))


class Stopwatch:
    def __init__(self) -> None:
        self._start = time.perf_counter()
        self.elapsed_ms: float = 0.0

    def stop(self) -> float:
        self.elapsed_ms = (time.perf_counter() - self._start) * 1000.0
        return self.elapsed_ms


@contextmanager
def stopwatch() -> Iterator[Stopwatch]:
    """Time a block; elapsed_ms is set when the block exits (also on error)."""
    sw = Stopwatch()
    try:
        yield sw
    finally:
        sw.stop()


__all__ = ["truncate_for_log", "to_jsonable", "log_event", "stopwatch", "Stopwatch"]
