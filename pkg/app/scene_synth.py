"""
Seeded synthetic scenes with planted targets, confuser patches and ground truth.

The background is a per-pixel convex mixture of smooth endmember spectra plus
a smooth low-order perturbation (endmember variability) and white noise.
Target materials share the background's continuum family but carry narrow
absorption features; each confuser copies its target's continuum (with an
offset) and one of its features. Every draw comes from a single
numpy Generator seeded by the scene spec, in a fixed order.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.ndimage import gaussian_filter1d

from .cube_io import HyperCube, LibraryEntry, SpectralLibrary, write_cube, write_spectral_library
from .errors import DuplicateName, InputError, IoFailure, SpecOutOfBounds
from .json_schemas import SCENE_SPEC_SCHEMA, validate_json
from .telemetry.events import log_event

logger = logging.getLogger("app.scene_synth")

STANDARD_SEED = 20240818
TRUTH_COLUMNS = ["label", "kind", "center_line", "center_sample", "min_line", "min_sample", "max_line", "max_sample"]


class Placement(BaseModel):
    material: str = Field(description="Library entry planted in this rectangle")
    center: Tuple[int, int] = Field(description="(line, sample) of the rectangle center")
    width: int = Field(default=1, description="Extent along samples, in pixels")
    height: int = Field(default=1, description="Extent along lines, in pixels")
    abundance: float = Field(default=1.0, description="Linear mixing fraction in (0, 1]")

    def bounds(self) -> Tuple[int, int, int, int]:
        """(min_line, min_sample, max_line, max_sample), inclusive."""
        min_line = self.center[0] - (self.height - 1) // 2
        min_sample = self.center[1] - (self.width - 1) // 2
        return min_line, min_sample, min_line + self.height - 1, min_sample + self.width - 1


class SceneSpec(BaseModel):
    lines: int
    samples: int
    bands: int
    wavelength_range: Tuple[float, float] = (0.4, 2.5)
    background_endmembers: int = 3
    noise_sigma: float = 0.01
    variability_sigma: float = Field(default=0.0, description="Std of per-pixel smooth perturbation coefficients")
    variability_order: int = Field(default=3, description="Number of low-frequency cosine terms")
    target_materials: List[str] = Field(default_factory=list)
    confuser_materials: Dict[str, str] = Field(
        default_factory=dict, description="Confuser name -> target material it resembles"
    )
    targets: List[Placement] = Field(default_factory=list)
    confusers: List[Placement] = Field(default_factory=list)
    seed: int = Field(default=STANDARD_SEED, ge=0, description="Seed of the single generator all draws come from")


@dataclass(frozen=True)
class TruthEntry:
    label: str
    kind: str
    center: Tuple[int, int]
    min_corner: Tuple[int, int]
    max_corner: Tuple[int, int]
    abundance: Optional[float] = None

    @property
    def member_pixels(self) -> List[Tuple[int, int]]:
        return [
            (line, sample)
            for line in range(self.min_corner[0], self.max_corner[0] + 1)
            for sample in range(self.min_corner[1], self.max_corner[1] + 1)
        ]

    @property
    def size(self) -> Tuple[int, int]:
        return self.max_corner[0] - self.min_corner[0] + 1, self.max_corner[1] - self.min_corner[1] + 1


@dataclass(frozen=True)
class GroundTruth:
    entries: Tuple[TruthEntry, ...] = ()

    def of_kind(self, kind: str) -> List[TruthEntry]:
        return [e for e in self.entries if e.kind == kind]

    def label_map(self, lines: int, samples: int) -> np.ndarray:
        """Entry index per pixel, -1 where nothing is planted."""
        out = np.full((lines, samples), -1, dtype=np.int64)
        for i, e in enumerate(self.entries):
            out[e.min_corner[0]:e.max_corner[0] + 1, e.min_corner[1]:e.max_corner[1] + 1] = i
        return out


def load_scene_spec(path: str) -> SceneSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise IoFailure(f"cannot read scene spec {path}: {e}")
    except json.JSONDecodeError as e:
        raise InputError(f"scene spec {path} is not valid JSON: {e}")
    validate_json(doc, SCENE_SPEC_SCHEMA)
    return SceneSpec.model_validate(doc)


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    """Copy of spec with another seed, validated like a spec file."""
    doc = spec.model_dump(mode="json")
    doc["seed"] = seed
    validate_json(doc, SCENE_SPEC_SCHEMA)
    return SceneSpec.model_validate(doc)


def check_spec(spec: SceneSpec) -> None:
    if spec.lines < 1 or spec.samples < 1:
        raise SpecOutOfBounds(f"scene must have at least one pixel, got {spec.lines}x{spec.samples}")
    if spec.bands < 10:
        raise SpecOutOfBounds(f"scene needs at least 10 bands for a truncation sweep, got {spec.bands}")
    lo, hi = spec.wavelength_range
    if not 0.0 < lo < hi:
        raise SpecOutOfBounds(f"wavelength range must satisfy 0 < min < max, got {spec.wavelength_range}")
    if spec.background_endmembers < 1:
        raise SpecOutOfBounds("at least one background endmember is required")
    if spec.noise_sigma < 0.0 or spec.variability_sigma < 0.0:
        raise SpecOutOfBounds("noise_sigma and variability_sigma must be non-negative")
    if spec.variability_order < 1:
        raise SpecOutOfBounds("variability_order must be at least 1")
    if spec.seed < 0:
        raise SpecOutOfBounds(f"seed must be non-negative, got {spec.seed}")
    names = list(spec.target_materials) + list(spec.confuser_materials)
    if len(set(names)) != len(names):
        raise DuplicateName(f"material names must be unique: {names}")
    for confuser, target in spec.confuser_materials.items():
        if target not in spec.target_materials:
            raise SpecOutOfBounds(f"confuser {confuser!r} resembles unknown target {target!r}")

    taken = np.zeros((spec.lines, spec.samples), dtype=bool)
    for kind, known, placements in (
        ("target", spec.target_materials, spec.targets),
        ("confuser", list(spec.confuser_materials), spec.confusers),
    ):
        for p in placements:
            if p.material not in known:
                raise SpecOutOfBounds(f"{kind} placement uses unknown material {p.material!r}")
            if not 0.0 < p.abundance <= 1.0:
                raise SpecOutOfBounds(f"abundance must be in (0, 1], got {p.abundance} for {p.material!r}")
            if p.width < 1 or p.height < 1:
                raise SpecOutOfBounds(f"rectangle for {p.material!r} must be at least 1x1")
            l0, s0, l1, s1 = p.bounds()
            if l0 < 0 or s0 < 0 or l1 >= spec.lines or s1 >= spec.samples:
                raise SpecOutOfBounds(
                    f"{kind} {p.material!r} at {p.center} ({p.height}x{p.width}) leaves the {spec.lines}x{spec.samples} image"
                )
            if taken[l0:l1 + 1, s0:s1 + 1].any():
                raise SpecOutOfBounds(f"{kind} {p.material!r} at {p.center} overlaps another placement")
            taken[l0:l1 + 1, s0:s1 + 1] = True


def _smooth_curve(rng: np.random.Generator, bands: int) -> np.ndarray:
    """Cumulative sum of low-pass filtered noise, normalized to [0, 1]."""
    walk = np.cumsum(gaussian_filter1d(rng.normal(size=bands), sigma=max(1.0, bands / 8.0), mode="nearest"))
    span = walk.max() - walk.min()
    if span == 0.0:
        return np.full(bands, 0.5)
    return (walk - walk.min()) / span


def _absorption(wavelengths: np.ndarray, features: List[Tuple[float, float, float]]) -> np.ndarray:
    """Multiplicative transmission for (center, width, depth) Gaussian features."""
    dip = np.zeros_like(wavelengths)
    for center, width, depth in features:
        dip += depth * np.exp(-0.5 * ((wavelengths - center) / width) ** 2)
    return np.clip(1.0 - dip, 0.05, 1.0)


def _draw_features(rng: np.random.Generator, lo: float, hi: float, n: int) -> List[Tuple[float, float, float]]:
    margin = 0.05 * (hi - lo)
    return [
        (float(rng.uniform(lo + margin, hi - margin)), float(rng.uniform(0.015, 0.03)), float(rng.uniform(0.25, 0.4)))
        for _ in range(n)
    ]


def _material_spectra(
    spec: SceneSpec, rng: np.random.Generator, wavelengths: np.ndarray, endmembers: np.ndarray
) -> Dict[str, np.ndarray]:
    lo, hi = spec.wavelength_range
    continua: Dict[str, np.ndarray] = {}
    features: Dict[str, List[Tuple[float, float, float]]] = {}
    spectra: Dict[str, np.ndarray] = {}
    for name in spec.target_materials:
        mix = rng.dirichlet(np.ones(spec.background_endmembers)) @ endmembers
        tilt = _smooth_curve(rng, spec.bands)
        continua[name] = np.clip(mix + 0.2 * (tilt - tilt.mean()), 0.02, 0.98)
        features[name] = _draw_features(rng, lo, hi, 3)
        spectra[name] = continua[name] * _absorption(wavelengths, features[name])
    for name, resembles in spec.confuser_materials.items():
        tilt = _smooth_curve(rng, spec.bands)
        offset = float(rng.normal(0.0, 0.03))
        continuum = np.clip(continua[resembles] + offset + 0.05 * (tilt - tilt.mean()), 0.02, 0.98)
        shared = features[resembles][:1]
        spectra[name] = continuum * _absorption(wavelengths, shared + _draw_features(rng, lo, hi, 2))
    return spectra


def generate_scene(spec: SceneSpec) -> Tuple[HyperCube, SpectralLibrary, GroundTruth]:
    check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.wavelength_range
    wavelengths = np.linspace(lo, hi, spec.bands)
    n = spec.lines * spec.samples

    endmembers = np.stack([_smooth_curve(rng, spec.bands) for _ in range(spec.background_endmembers)])
    abundances = rng.dirichlet(np.ones(spec.background_endmembers), size=n)
    background = abundances @ endmembers
    if spec.variability_sigma > 0.0:
        phase = (wavelengths - lo) / (hi - lo)
        basis = np.stack([np.cos(np.pi * (j + 1) * phase) for j in range(spec.variability_order)])
        coef = rng.normal(0.0, spec.variability_sigma, size=(n, spec.variability_order))
        background = background + coef @ basis
    data = background.reshape(spec.lines, spec.samples, spec.bands)

    spectra = _material_spectra(spec, rng, wavelengths, endmembers)
    entries: List[TruthEntry] = []
    for kind, placements in (("target", spec.targets), ("confuser", spec.confusers)):
        for p in placements:
            l0, s0, l1, s1 = p.bounds()
            patch = data[l0:l1 + 1, s0:s1 + 1]
            data[l0:l1 + 1, s0:s1 + 1] = p.abundance * spectra[p.material] + (1.0 - p.abundance) * patch
            entries.append(TruthEntry(p.material, kind, tuple(p.center), (l0, s0), (l1, s1), p.abundance))

    if spec.noise_sigma > 0.0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)

    library = SpectralLibrary(
        wavelengths=wavelengths,
        entries=tuple(
            [LibraryEntry(name, "target", spectra[name]) for name in spec.target_materials]
            + [LibraryEntry(name, "confuser", spectra[name]) for name in spec.confuser_materials]
        ),
    )
    cube = HyperCube(data=data, wavelengths=wavelengths)
    log_event(
        logger,
        "scene_generated",
        lines=spec.lines,
        samples=spec.samples,
        bands=spec.bands,
        targets=len(spec.targets),
        confusers=len(spec.confusers),
        seed=spec.seed,
    )
    return cube, library, GroundTruth(tuple(entries))


# Planted layout of the standard scene: (size, abundance) per target slot.
_STANDARD_SIZES = [(5, 1.0), (4, 1.0), (3, 0.9), (3, 0.8), (2, 1.0), (2, 0.85), (1, 0.6), (1, 0.6)]


def standard_scene_spec(seed: int = STANDARD_SEED) -> SceneSpec:
    """128x128x50, 3 endmembers, 30 targets over 4 materials, 10 confuser patches."""
    materials = ["T1", "T2", "T3", "T4"]
    confuser_of = {"C1": "T1", "C2": "T2", "C3": "T3", "C4": "T4"}
    slots: List[Tuple[str, str, int, float]] = []
    for size, abundance in _STANDARD_SIZES:
        for m in materials:
            # T3 and T4 skip the 3x3 @ 0.8 slot: 8 + 8 + 7 + 7 = 30 targets
            if (size, abundance) == (3, 0.8) and m in ("T3", "T4"):
                continue
            slots.append(("target", m, size, abundance))
    for i, size in enumerate([3, 2, 3, 2, 3, 2, 3, 2, 3, 2]):
        slots.append(("confuser", "C%d" % (i % 4 + 1), size, 1.0))

    # objects sit on an 18-pixel grid, centers 9, 27, ..., 117
    positions = [(9 + 18 * i, 9 + 18 * j) for i in range(7) for j in range(7)]
    targets: List[Placement] = []
    confusers: List[Placement] = []
    for (kind, material, size, abundance), center in zip(slots, positions):
        p = Placement(material=material, center=center, width=size, height=size, abundance=abundance)
        (targets if kind == "target" else confusers).append(p)
    return SceneSpec(
        lines=128,
        samples=128,
        bands=50,
        background_endmembers=3,
        noise_sigma=0.01,
        variability_sigma=0.03,
        variability_order=3,
        target_materials=materials,
        confuser_materials=confuser_of,
        targets=targets,
        confusers=confusers,
        seed=seed,
    )


def write_truth(truth: GroundTruth, path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRUTH_COLUMNS)
            for e in truth.entries:
                w.writerow([e.label, e.kind, e.center[0], e.center[1], *e.min_corner, *e.max_corner])
    except OSError as e:
        raise IoFailure(f"cannot write ground truth {path}: {e}")


def load_truth(path: str) -> GroundTruth:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise IoFailure(f"cannot read ground truth {path}: {e}")
    entries = []
    for i, row in enumerate(rows, start=2):
        try:
            entries.append(
                TruthEntry(
                    label=row["label"],
                    kind=row["kind"],
                    center=(int(row["center_line"]), int(row["center_sample"])),
                    min_corner=(int(row["min_line"]), int(row["min_sample"])),
                    max_corner=(int(row["max_line"]), int(row["max_sample"])),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"{path} row {i}: malformed ground-truth row ({e})")
    return GroundTruth(tuple(entries))


def write_scene(out_dir: str, cube: HyperCube, library: SpectralLibrary, truth: GroundTruth) -> Dict[str, str]:
    """Write scene.hdr/.img, library.csv and truth.csv into out_dir."""
    paths = {
        "cube": os.path.join(out_dir, "scene.hdr"),
        "library": os.path.join(out_dir, "library.csv"),
        "truth": os.path.join(out_dir, "truth.csv"),
    }
    write_cube(cube, paths["cube"], description="synthetic scene")
    write_spectral_library(library, paths["library"])
    write_truth(truth, paths["truth"])
    return paths


__all__ = [
    "Placement",
    "SceneSpec",
    "TruthEntry",
    "GroundTruth",
    "load_scene_spec",
    "with_seed",
    "check_spec",
    "generate_scene",
    "standard_scene_spec",
    "write_truth",
    "load_truth",
    "write_scene",
    "STANDARD_SEED",
]
