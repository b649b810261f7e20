"""
ACE scoring in whitened coordinates and ROI extraction.

In whitened space ACE is the cosine between a pixel and the target, so the
unsquared score lies in [-1, 1]. The per-pixel scoring loop is the hot path:
rows are scored in independent chunks, optionally on a thread pool, and each
pixel's value does not depend on how rows were grouped.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .config import ACE_CHUNK_ROWS, ACE_SQUARED, ACE_THRESHOLD, ACE_WORKERS, ROI_CAP, ROI_ORDER
from .cube_io import HyperCube, write_envi
from .errors import InputError, IoFailure, LengthMismatch, NumericalError, ZeroTarget
from .pca import SceneStats, WhitenedCube

logger = logging.getLogger("app.detect")

ROI_ORDERS = ("score", "raster")
# 8-connectivity
_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class AceScoreMap:
    scores: np.ndarray
    target_name: str
    rank_k: int
    squared: bool = False

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise InputError(f"score map must be 2-D, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NumericalError(f"score map for {self.target_name!r} at k={self.rank_k} has non-finite values")
        s = s.copy() if s is self.scores else s
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class RoiRecord:
    id: int
    center: Tuple[int, int]
    peak_score: float
    pixel_count: int
    member_pixels: Tuple[Tuple[int, int], ...]
    mean_spectrum: np.ndarray


def _norm_target(t_hat: np.ndarray) -> float:
    t = np.asarray(t_hat, dtype=np.float64)
    tn = float(np.sqrt(np.einsum("k,k->", t, t)))
    if tn == 0.0:
        raise ZeroTarget("target equals the scene mean in the retained subspace")
    return tn


def ace_score(x_hat: np.ndarray, t_hat: np.ndarray, squared: bool = False) -> float:
    """Cosine of the angle between whitened pixel and target; 0 for a zero pixel."""
    x = np.asarray(x_hat, dtype=np.float64)
    t = np.asarray(t_hat, dtype=np.float64)
    if x.shape != t.shape or x.ndim != 1:
        raise LengthMismatch(f"pixel has {x.size} whitened components, target has {t.size}")
    tn = _norm_target(t)
    xn = float(np.sqrt(np.einsum("k,k->", x, x)))
    if xn == 0.0:
        return 0.0
    c = min(1.0, max(-1.0, float(np.einsum("k,k->", x, t)) / (xn * tn)))
    return c * c if squared else c


def _score_rows(rows: np.ndarray, t: np.ndarray, tn: float, squared: bool) -> np.ndarray:
    # reductions run along the contiguous band axis, one row at a time
    dots = np.sum(rows * t, axis=-1)
    xn = np.sqrt(np.sum(rows * rows, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(xn > 0.0, dots / (xn * tn), 0.0)
    np.clip(c, -1.0, 1.0, out=c)
    return c * c if squared else c


def ace_map(
    wcube: WhitenedCube,
    t_hat: np.ndarray,
    target_name: str = "target",
    *,
    squared: bool = ACE_SQUARED,
    workers: int = ACE_WORKERS,
    chunk_rows: int = ACE_CHUNK_ROWS,
) -> AceScoreMap:
    t = np.asarray(t_hat, dtype=np.float64)
    if t.shape != (wcube.rank,):
        raise LengthMismatch(f"whitened target has {t.size} components; cube has rank {wcube.rank}")
    tn = _norm_target(t)
    chunk_rows = max(1, int(chunk_rows))
    out = np.empty((wcube.lines, wcube.samples), dtype=np.float64)
    starts = range(0, wcube.lines, chunk_rows)

    def run(start: int) -> None:
        stop = min(start + chunk_rows, wcube.lines)
        out[start:stop] = _score_rows(wcube.data[start:stop], t, tn, squared)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return AceScoreMap(scores=out, target_name=target_name, rank_k=wcube.rank, squared=squared)


def ace_direct(cube: HyperCube, stats: SceneStats, target: np.ndarray, target_name: str = "target", squared: bool = False) -> AceScoreMap:
    """ACE from the quadratic forms tᵀΣ⁻¹x, xᵀΣ⁻¹x, tᵀΣ⁻¹t via linear solves (full rank only)."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != (cube.bands,):
        raise LengthMismatch(f"target has {t.size} values for a {cube.bands}-band cube")
    xc = cube.pixels() - stats.mean
    tc = t - stats.mean
    try:
        solved_t = np.linalg.solve(stats.covariance, tc)
        solved_x = np.linalg.solve(stats.covariance, xc.T).T
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"covariance is singular; direct ACE needs a full-rank scene: {e}")
    tt = float(tc @ solved_t)
    if tt <= 0.0:
        raise ZeroTarget("target equals the scene mean")
    num = xc @ solved_t
    xx = np.einsum("pb,pb->p", xc, solved_x)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(xx > 0.0, num / np.sqrt(np.maximum(xx, 0.0) * tt), 0.0)
    np.clip(c, -1.0, 1.0, out=c)
    if squared:
        c = c * c
    return AceScoreMap(scores=c.reshape(cube.lines, cube.samples), target_name=target_name, rank_k=cube.bands, squared=squared)


def extract_rois(
    score_map: AceScoreMap,
    cube: HyperCube,
    threshold: float = ACE_THRESHOLD,
    cap: int = ROI_CAP,
    order: str = ROI_ORDER,
) -> List[RoiRecord]:
    """Group above-threshold pixels into 8-connected ROIs, rank them, keep `cap`.

    order="score": descending peak score, ties by center line then sample.
    order="raster": scan order of each component's first pixel.
    """
    if not -1.0 < threshold <= 1.0:
        raise InputError(f"threshold must be in (-1, 1], got {threshold}")
    if cap < 1:
        raise InputError(f"ROI cap must be at least 1, got {cap}")
    if order not in ROI_ORDERS:
        raise InputError(f"ROI order must be one of {ROI_ORDERS}, got {order!r}")
    if score_map.shape != (cube.lines, cube.samples):
        raise LengthMismatch(f"score map {score_map.shape} does not match cube {cube.lines}x{cube.samples}")

    scores = score_map.scores
    labels, n = ndimage.label(scores >= threshold, structure=_STRUCTURE)
    if n == 0:
        return []
    flat_labels = labels.ravel()
    flat_scores = scores.ravel()
    idx = np.flatnonzero(flat_labels)
    # stable sort keeps raster order inside each component
    idx = idx[np.argsort(flat_labels[idx], kind="stable")]
    bounds = np.cumsum(np.bincount(flat_labels[idx], minlength=n + 1)[1:])
    groups = np.split(idx, bounds[:-1])

    candidates = []
    for members in groups:
        best = members[int(np.argmax(flat_scores[members]))]
        line, sample = divmod(int(best), cube.samples)
        candidates.append((float(flat_scores[best]), (line, sample), members))
    if order == "score":
        candidates.sort(key=lambda c: (-c[0], c[1][0], c[1][1]))
    kept = candidates[:cap]

    samples = cube.samples
    rois: List[RoiRecord] = []
    for i, (peak, center, members) in enumerate(kept, start=1):
        lines_, samples_ = np.divmod(members, samples)
        rois.append(
            RoiRecord(
                id=i,
                center=center,
                peak_score=peak,
                pixel_count=int(members.size),
                member_pixels=tuple(zip(lines_.tolist(), samples_.tolist())),
                mean_spectrum=cube.data[lines_, samples_].mean(axis=0),
            )
        )
    if n > cap:
        logger.info("%s k=%d: %d components above %.3f, kept %d", score_map.target_name, score_map.rank_k, n, threshold, cap)
    return rois


def write_score_map(score_map: AceScoreMap, header_path: str, *, interleave: str = "bsq") -> str:
    return write_envi(
        score_map.scores[:, :, np.newaxis],
        header_path,
        interleave=interleave,
        data_type=5,
        description=f"ACE score map target={score_map.target_name} k={score_map.rank_k}"
        + (" squared" if score_map.squared else ""),
    )


def write_rois_csv(rois: Sequence[RoiRecord], path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["id", "line", "sample", "peak_score", "pixel_count"])
            for r in rois:
                w.writerow([r.id, r.center[0], r.center[1], repr(r.peak_score), r.pixel_count])
    except OSError as e:
        raise IoFailure(f"cannot write ROI table {path}: {e}")


__all__ = [
    "AceScoreMap",
    "RoiRecord",
    "ace_score",
    "ace_map",
    "ace_direct",
    "extract_rois",
    "write_score_map",
    "write_rois_csv",
]
