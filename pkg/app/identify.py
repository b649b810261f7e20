"""
ROI identification: local background, class probabilities and spectral fit.

Each ROI is compared against every library entry plus one `background` class
(the mean of low-ACE annulus pixels around the ROI). Class probabilities are a
Gaussian kernel over squared whitened distances; the spectral fit is the
mean-removed cosine to the best class, mapped to [0, 1].
"""
from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .config import BG_INNER, BG_MAX_ACE, BG_MIN_SAMPLES, BG_OUTER, ID_F_MIN, ID_P_MIN
from .cube_io import BACKGROUND_LABEL, HyperCube, SpectralLibrary
from .detect import AceScoreMap, RoiRecord
from .errors import (
    ConstantSpectrum,
    InputError,
    InsufficientBackground,
    IoFailure,
    LengthMismatch,
)
from .pca import WhiteningModel, whiten

logger = logging.getLogger("app.identify")

TARGET = "target"
NON_TARGET = "non-target"
FLAG_INSUFFICIENT_BACKGROUND = "insufficient_background"
FLAG_TIED_BEST = "tied_best"
FLAG_CONSTANT_SPECTRUM = "constant_spectrum"

_STEM_SPLIT = re.compile(r"[_\-.# ]")


@dataclass(frozen=True)
class BackgroundSample:
    pixels: Tuple[Tuple[int, int], ...]
    spectra: np.ndarray
    annulus: Tuple[int, int]
    max_ace: float

    @property
    def count(self) -> int:
        return len(self.pixels)

    @property
    def mean_spectrum(self) -> np.ndarray:
        return self.spectra.mean(axis=0)


@dataclass(frozen=True)
class IdentificationResult:
    roi_id: int
    center: Tuple[int, int]
    peak_score: float
    best_label: str
    probability: float
    spectral_fit: float
    decision: str
    per_class_probabilities: Dict[str, float] = field(default_factory=dict)
    flag: str = ""
    stem: str = ""

    @property
    def is_target(self) -> bool:
        return self.decision == TARGET


def material_stem(name: str) -> str:
    """Material name without its measurement suffix ("F8_a" -> "F8")."""
    return _STEM_SPLIT.split(name, maxsplit=1)[0] or name


def estimate_background(
    score_map: AceScoreMap,
    cube: HyperCube,
    roi: RoiRecord,
    inner: int = BG_INNER,
    outer: int = BG_OUTER,
    max_ace: float = BG_MAX_ACE,
    min_samples: int = BG_MIN_SAMPLES,
) -> BackgroundSample:
    """Pixels with inner < Chebyshev distance <= outer from the ROI center and score < max_ace.

    ROI members are excluded; the square annulus is clipped at the image border.
    """
    if not 1 <= inner < outer:
        raise InputError(f"annulus needs 1 <= inner < outer, got inner={inner} outer={outer}")
    cl, cs = roi.center
    l0, l1 = max(0, cl - outer), min(cube.lines, cl + outer + 1)
    s0, s1 = max(0, cs - outer), min(cube.samples, cs + outer + 1)
    ll, ss = np.mgrid[l0:l1, s0:s1]
    dist = np.maximum(np.abs(ll - cl), np.abs(ss - cs))
    keep = (dist > inner) & (score_map.scores[l0:l1, s0:s1] < max_ace)
    if roi.member_pixels:
        members = np.array(roi.member_pixels)
        inside = (
            (members[:, 0] >= l0) & (members[:, 0] < l1) & (members[:, 1] >= s0) & (members[:, 1] < s1)
        )
        members = members[inside]
        keep[members[:, 0] - l0, members[:, 1] - s0] = False
    lines_, samples_ = ll[keep], ss[keep]
    if lines_.size < min_samples:
        raise InsufficientBackground(
            f"ROI {roi.id} at {roi.center}: {lines_.size} background pixels below ACE {max_ace}; need {min_samples}"
        )
    return BackgroundSample(
        pixels=tuple(zip(lines_.tolist(), samples_.tolist())),
        spectra=cube.data[lines_, samples_],
        annulus=(inner, outer),
        max_ace=max_ace,
    )


def spectral_fit(roi_spectrum: np.ndarray, reference: np.ndarray) -> float:
    a = np.asarray(roi_spectrum, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"spectra have {a.size} and {b.size} values")
    a = a - a.mean()
    b = b - b.mean()
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ConstantSpectrum("spectral fit is undefined for a constant spectrum")
    c = min(1.0, max(-1.0, float(a @ b) / (na * nb)))
    return (c + 1.0) / 2.0


def _class_means(library: SpectralLibrary, background: Optional[BackgroundSample]) -> Dict[str, np.ndarray]:
    means = {e.name: e.spectrum for e in library.entries}
    if background is not None:
        if background.count == 0:
            raise InsufficientBackground("background sample is empty")
        means[BACKGROUND_LABEL] = background.mean_spectrum
    return means


def class_probability(
    roi_spectrum: np.ndarray,
    library: SpectralLibrary,
    background: Optional[BackgroundSample],
    model: WhiteningModel,
) -> Dict[str, float]:
    """Label -> probability over library entries plus `background`.

    Probabilities are softmax(-d/2) of squared whitened distances, evaluated in
    sorted label order so library ordering never changes a value. Passing
    background=None scores the library entries alone.
    """
    x_hat = whiten(model, roi_spectrum)
    means = _class_means(library, background)
    labels = sorted(means)
    d = np.array([float(np.sum((x_hat - whiten(model, means[lab])) ** 2)) for lab in labels])
    p = softmax(-0.5 * d)
    return {lab: float(v) for lab, v in zip(labels, p)}


def identify(
    roi: RoiRecord,
    score_map: AceScoreMap,
    cube: HyperCube,
    library: SpectralLibrary,
    model: WhiteningModel,
    p_min: float = ID_P_MIN,
    f_min: float = ID_F_MIN,
    *,
    inner: int = BG_INNER,
    outer: int = BG_OUTER,
    max_ace: float = BG_MAX_ACE,
    min_samples: int = BG_MIN_SAMPLES,
) -> IdentificationResult:
    flags: List[str] = []
    try:
        background: Optional[BackgroundSample] = estimate_background(
            score_map, cube, roi, inner=inner, outer=outer, max_ace=max_ace, min_samples=min_samples
        )
    except InsufficientBackground as e:
        logger.debug("%s", e.message)
        background = None
        flags.append(FLAG_INSUFFICIENT_BACKGROUND)

    probs = class_probability(roi.mean_spectrum, library, background, model)
    labels = list(probs)
    values = np.array([probs[lab] for lab in labels])
    best_idx = int(np.argmax(values))
    best_label = labels[best_idx]
    best_p = float(values[best_idx])
    if int(np.count_nonzero(values == values[best_idx])) > 1:
        flags.append(FLAG_TIED_BEST)

    reference = background.mean_spectrum if best_label == BACKGROUND_LABEL else library.get(best_label).spectrum
    try:
        fit = spectral_fit(roi.mean_spectrum, reference)
    except ConstantSpectrum:
        fit = 0.0
        flags.append(FLAG_CONSTANT_SPECTRUM)

    is_target = (
        background is not None
        and library.kind_of(best_label) == TARGET
        and best_p >= p_min
        and fit >= f_min
    )
    return IdentificationResult(
        roi_id=roi.id,
        center=roi.center,
        peak_score=roi.peak_score,
        best_label=best_label,
        probability=best_p,
        spectral_fit=fit,
        decision=TARGET if is_target else NON_TARGET,
        per_class_probabilities=probs,
        flag=";".join(flags),
        stem=material_stem(best_label),
    )


IDENTIFICATION_COLUMNS = [
    "roi_id",
    "line",
    "sample",
    "peak_score",
    "best_label",
    "probability",
    "spectral_fit",
    "decision",
    "flag",
    "stem",
]


def write_identifications_csv(results: Sequence[IdentificationResult], path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(IDENTIFICATION_COLUMNS)
            for r in results:
                w.writerow(
                    [
                        r.roi_id,
                        r.center[0],
                        r.center[1],
                        repr(r.peak_score),
                        r.best_label,
                        repr(r.probability),
                        repr(r.spectral_fit),
                        r.decision,
                        r.flag,
                        r.stem,
                    ]
                )
    except OSError as e:
        raise IoFailure(f"cannot write identification table {path}: {e}")


__all__ = [
    "BackgroundSample",
    "IdentificationResult",
    "material_stem",
    "estimate_background",
    "spectral_fit",
    "class_probability",
    "identify",
    "write_identifications_csv",
    "IDENTIFICATION_COLUMNS",
    "TARGET",
    "NON_TARGET",
]
