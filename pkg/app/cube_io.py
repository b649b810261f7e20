"""
Hyperspectral cube and spectral library I/O.

Cubes are stored as an ENVI-style ASCII header (`key = value`, brace blocks
may span lines) next to a raw binary payload. In memory every cube is held in
band-interleaved-by-pixel order as native float64, shape (lines, samples,
bands), so one pixel's spectrum is contiguous whatever the on-disk interleave.

Spectral libraries are comma-separated text: a header row of names starting
with `wavelength_um`, a row of kind annotations (`target`/`confuser`), then one
row per wavelength.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DuplicateName,
    EmptyLibrary,
    GridMismatch,
    InputError,
    IoFailure,
    LengthMismatch,
    MalformedHeader,
    NonFiniteData,
    NonFiniteValue,
    RaggedRows,
    SizeMismatch,
    TooFewBands,
    UnknownEntry,
    UnsupportedDataType,
)

logger = logging.getLogger("app.cube_io")

INTERLEAVES = ("bsq", "bil", "bip")
# ENVI numeric data type codes accepted for payloads
DATA_TYPES: Dict[int, str] = {4: "f4", 5: "f8"}
BACKGROUND_LABEL = "background"
ENTRY_KINDS = ("target", "confuser")
_REQUIRED_KEYS = ("samples", "lines", "bands", "data type", "interleave", "byte order")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HyperCube:
    data: np.ndarray
    wavelengths: np.ndarray
    wavelengths_defaulted: bool = False
    data_type: int = 5
    bad_band_list: Optional[Tuple[bool, ...]] = None

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InputError(f"cube data must be 3-D (lines, samples, bands), got shape {data.shape}")
        lines, samples, bands = data.shape
        if lines < 1 or samples < 1:
            raise InputError(f"cube needs at least one pixel, got {lines}x{samples}")
        if bands < 2:
            raise TooFewBands(f"cube needs at least 2 bands, got {bands}")
        wl = np.asarray(self.wavelengths, dtype=np.float64).copy()
        if wl.shape != (bands,):
            raise LengthMismatch(f"{wl.size} wavelengths for {bands} bands")
        if not np.all(np.diff(wl) > 0):
            raise InputError("wavelengths must be strictly increasing")
        bad = ~np.isfinite(data)
        if bad.any():
            line, sample, band = (int(i) for i in np.argwhere(bad)[0])
            raise NonFiniteData(
                f"non-finite value at band {band}, pixel {line * samples + sample} (line {line}, sample {sample})"
            )
        if data is self.data:
            data = data.copy()
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "wavelengths", _readonly(wl))

    @property
    def lines(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_count(self) -> int:
        return self.lines * self.samples

    def pixels(self) -> np.ndarray:
        """(lines*samples, bands) view in raster order."""
        return self.data.reshape(-1, self.bands)

    def spectrum(self, line: int, sample: int) -> np.ndarray:
        return self.data[line, sample]


@dataclass(frozen=True)
class BandMask:
    keep: np.ndarray

    def __post_init__(self) -> None:
        keep = np.asarray(self.keep, dtype=bool).copy()
        if keep.ndim != 1:
            raise InputError("band mask must be one-dimensional")
        if int(keep.sum()) < 2:
            raise TooFewBands(f"band mask keeps {int(keep.sum())} band(s); at least 2 are required")
        object.__setattr__(self, "keep", _readonly(keep))

    @property
    def kept(self) -> int:
        return int(self.keep.sum())

    @classmethod
    def all_bands(cls, bands: int) -> "BandMask":
        return cls(np.ones(bands, dtype=bool))

    @classmethod
    def from_bad_band_list(cls, values: Iterable) -> "BandMask":
        return cls(np.array([bool(int(float(v))) for v in values], dtype=bool))


@dataclass(frozen=True)
class LibraryEntry:
    name: str
    kind: str
    spectrum: np.ndarray


@dataclass(frozen=True)
class SpectralLibrary:
    wavelengths: np.ndarray
    entries: Tuple[LibraryEntry, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        wl = np.asarray(self.wavelengths, dtype=np.float64).copy()
        if not self.entries:
            raise EmptyLibrary("spectral library has no entries")
        if wl.ndim != 1 or wl.size < 2:
            raise EmptyLibrary("spectral library needs at least 2 wavelengths")
        if not np.all(np.isfinite(wl)):
            raise NonFiniteValue("non-finite wavelength in spectral library")
        if not np.all(np.diff(wl) > 0):
            raise InputError("library wavelengths must be strictly increasing")
        seen = set()
        entries: List[LibraryEntry] = []
        for e in self.entries:
            if e.name in seen:
                raise DuplicateName(f"duplicate library entry name: {e.name!r}")
            if e.name == BACKGROUND_LABEL:
                raise DuplicateName(f"library entry name {e.name!r} is reserved for the background class")
            if e.kind not in ENTRY_KINDS:
                raise InputError(f"entry {e.name!r} has kind {e.kind!r}; expected one of {ENTRY_KINDS}")
            seen.add(e.name)
            spec = np.asarray(e.spectrum, dtype=np.float64).copy()
            if spec.shape != wl.shape:
                raise LengthMismatch(f"entry {e.name!r} has {spec.size} values for {wl.size} wavelengths")
            if not np.all(np.isfinite(spec)):
                raise NonFiniteValue(f"entry {e.name!r} contains non-finite values")
            entries.append(LibraryEntry(e.name, e.kind, _readonly(spec)))
        object.__setattr__(self, "wavelengths", _readonly(wl))
        object.__setattr__(self, "entries", tuple(entries))

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> LibraryEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise UnknownEntry(f"no library entry named {name!r}")

    def kind_of(self, name: str) -> str:
        if name == BACKGROUND_LABEL:
            return BACKGROUND_LABEL
        return self.get(name).kind

    def of_kind(self, kind: str) -> List[LibraryEntry]:
        return [e for e in self.entries if e.kind == kind]


# -------- ENVI header --------
def parse_header(text: str) -> Dict[str, str]:
    """Parse ENVI `key = value` text into a lower-cased key dict.

    Brace-delimited values may span several lines; braces are kept in the value.
    """
    out: Dict[str, str] = {}
    pending_key: Optional[str] = None
    buf: List[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if pending_key is not None:
            buf.append(line)
            if "}" in line:
                out[pending_key] = " ".join(buf)
                pending_key, buf = None, []
            continue
        if not line or line.upper() == "ENVI" or line.startswith(";"):
            continue
        if "=" not in line:
            raise MalformedHeader(f"header line is not `key = value`: {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip().lower(), value.strip()
        if value.startswith("{") and "}" not in value:
            pending_key, buf = key, [value]
            continue
        out[key] = value
    if pending_key is not None:
        raise MalformedHeader(f"unterminated brace block for key {pending_key!r}")
    return out


def _brace_list(value: str) -> List[str]:
    inner = value.strip()
    if inner.startswith("{"):
        inner = inner[1:]
    if inner.endswith("}"):
        inner = inner[:-1]
    return [tok for tok in re.split(r"[,\s]+", inner) if tok]


def _header_int(hdr: Dict[str, str], key: str) -> int:
    try:
        return int(hdr[key])
    except KeyError:
        raise MalformedHeader(f"header is missing required key {key!r}")
    except ValueError:
        raise MalformedHeader(f"header key {key!r} is not an integer: {hdr[key]!r}")


def _binary_path(header_path: str) -> str:
    stem, _ = os.path.splitext(header_path)
    for candidate in (stem + ".img", stem):
        if os.path.isfile(candidate):
            return candidate
    raise IoFailure(f"no binary payload found next to {header_path}")


def _dtype(code: int, byte_order: int) -> np.dtype:
    if code not in DATA_TYPES:
        raise UnsupportedDataType(f"data type {code} is not supported (use 4 = float32 or 5 = float64)")
    if byte_order not in (0, 1):
        raise MalformedHeader(f"byte order must be 0 or 1, got {byte_order}")
    return np.dtype(("<" if byte_order == 0 else ">") + DATA_TYPES[code])


def load_cube(header_path: str) -> HyperCube:
    """Read an ENVI header + binary pair into a canonical HyperCube."""
    try:
        with open(header_path, "r", encoding="utf-8") as f:
            hdr = parse_header(f.read())
    except OSError as e:
        raise IoFailure(f"cannot read header {header_path}: {e}")
    for key in _REQUIRED_KEYS:
        if key not in hdr:
            raise MalformedHeader(f"header is missing required key {key!r}")
    samples = _header_int(hdr, "samples")
    lines = _header_int(hdr, "lines")
    bands = _header_int(hdr, "bands")
    code = _header_int(hdr, "data type")
    byte_order = _header_int(hdr, "byte order")
    offset = _header_int(hdr, "header offset") if "header offset" in hdr else 0
    interleave = hdr["interleave"].strip().lower()
    if interleave not in INTERLEAVES:
        raise MalformedHeader(f"unknown interleave {interleave!r}")
    if min(samples, lines, bands) < 1:
        raise MalformedHeader(f"non-positive dimensions {lines}x{samples}x{bands}")
    dt = _dtype(code, byte_order)

    bin_path = _binary_path(header_path)
    expected = lines * samples * bands * dt.itemsize
    actual = os.path.getsize(bin_path) - offset
    if actual != expected:
        raise SizeMismatch(
            f"{bin_path} holds {actual} payload bytes; header implies {lines}x{samples}x{bands}x{dt.itemsize} = {expected}"
        )
    try:
        flat = np.fromfile(bin_path, dtype=dt, offset=offset)
    except OSError as e:
        raise IoFailure(f"cannot read payload {bin_path}: {e}")

    if interleave == "bsq":
        data = flat.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        data = flat.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:
        data = flat.reshape(lines, samples, bands)
    data = np.ascontiguousarray(data, dtype=np.float64)

    defaulted = "wavelength" not in hdr
    if defaulted:
        wavelengths = np.arange(bands, dtype=np.float64)
        logger.warning("%s has no wavelength block; using band index as wavelength", header_path)
    else:
        try:
            wavelengths = np.array([float(v) for v in _brace_list(hdr["wavelength"])])
        except ValueError:
            raise MalformedHeader("wavelength block contains non-numeric values")
        if wavelengths.size != bands:
            raise MalformedHeader(f"wavelength block has {wavelengths.size} values for {bands} bands")
        if hdr.get("wavelength units", "").strip().lower() in ("nanometers", "nm"):
            wavelengths = wavelengths / 1000.0

    bbl = None
    if "bbl" in hdr:
        bbl = tuple(bool(int(float(v))) for v in _brace_list(hdr["bbl"]))
        if len(bbl) != bands:
            raise MalformedHeader(f"bbl has {len(bbl)} values for {bands} bands")

    return HyperCube(
        data=data,
        wavelengths=wavelengths,
        wavelengths_defaulted=defaulted,
        data_type=code,
        bad_band_list=bbl,
    )


def write_envi(
    data: np.ndarray,
    header_path: str,
    *,
    interleave: str = "bip",
    data_type: int = 5,
    byte_order: int = 0,
    description: Optional[str] = None,
    wavelengths: Optional[Sequence[float]] = None,
    bad_band_list: Optional[Sequence[bool]] = None,
) -> str:
    """Write a (lines, samples, bands) array as an ENVI pair; returns the binary path.

    Unlike HyperCube this accepts single-band rasters (score maps).
    """
    interleave = interleave.lower()
    if interleave not in INTERLEAVES:
        raise InputError(f"unknown interleave {interleave!r}")
    if data.ndim != 3:
        raise InputError(f"raster must be 3-D, got shape {data.shape}")
    dt = _dtype(int(data_type), byte_order)
    n_lines, n_samples, n_bands = data.shape
    if interleave == "bsq":
        arr = data.transpose(2, 0, 1)
    elif interleave == "bil":
        arr = data.transpose(0, 2, 1)
    else:
        arr = data
    stem, _ = os.path.splitext(header_path)
    bin_path = stem + ".img"
    lines = [
        "ENVI",
        f"description = {{{description or 'written by app.cube_io'}}}",
        f"samples = {n_samples}",
        f"lines = {n_lines}",
        f"bands = {n_bands}",
        "header offset = 0",
        f"data type = {int(data_type)}",
        f"interleave = {interleave}",
        f"byte order = {byte_order}",
    ]
    if wavelengths is not None:
        lines.append("wavelength units = Micrometers")
        lines.append("wavelength = {" + ", ".join(repr(float(w)) for w in wavelengths) + "}")
    if bad_band_list is not None:
        lines.append("bbl = {" + ", ".join("1" if b else "0" for b in bad_band_list) + "}")
    try:
        os.makedirs(os.path.dirname(os.path.abspath(header_path)), exist_ok=True)
        with open(stem + ".hdr", "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        np.ascontiguousarray(arr).astype(dt).tofile(bin_path)
    except OSError as e:
        raise IoFailure(f"cannot write raster {header_path}: {e}")
    return bin_path


def write_cube(
    cube: HyperCube,
    header_path: str,
    *,
    interleave: str = "bip",
    data_type: Optional[int] = None,
    byte_order: int = 0,
    description: Optional[str] = None,
) -> str:
    """Write `cube` as `<name>.hdr` + `<name>.img`; returns the binary path."""
    return write_envi(
        cube.data,
        header_path,
        interleave=interleave,
        data_type=cube.data_type if data_type is None else int(data_type),
        byte_order=byte_order,
        description=description,
        wavelengths=None if cube.wavelengths_defaulted else cube.wavelengths,
        bad_band_list=cube.bad_band_list,
    )


# -------- band masks --------
def load_band_mask(path: str) -> BandMask:
    """Read 0/1 tokens (comma or whitespace separated) into a BandMask."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            tokens = [t for t in re.split(r"[,\s]+", f.read()) if t]
    except OSError as e:
        raise IoFailure(f"cannot read band mask {path}: {e}")
    if any(t not in ("0", "1") for t in tokens):
        raise InputError(f"band mask {path} must contain only 0/1 tokens")
    return BandMask.from_bad_band_list(tokens)


def apply_band_mask(cube: HyperCube, mask: BandMask) -> HyperCube:
    if mask.keep.size != cube.bands:
        raise LengthMismatch(f"mask has {mask.keep.size} entries for a {cube.bands}-band cube")
    if mask.kept < 2:
        raise TooFewBands("mask keeps fewer than 2 bands")
    bbl = None
    if cube.bad_band_list is not None:
        bbl = tuple(b for b, k in zip(cube.bad_band_list, mask.keep) if k)
    return HyperCube(
        data=cube.data[:, :, mask.keep],
        wavelengths=cube.wavelengths[mask.keep],
        wavelengths_defaulted=cube.wavelengths_defaulted,
        data_type=cube.data_type,
        bad_band_list=bbl,
    )


def compose_masks(first: BandMask, second: BandMask) -> BandMask:
    """Mask equivalent to applying `first` and then `second` to the result."""
    if second.keep.size != first.kept:
        raise LengthMismatch(f"second mask has {second.keep.size} entries; first mask keeps {first.kept}")
    keep = first.keep.copy()
    keep[np.flatnonzero(first.keep)] = second.keep
    return BandMask(keep)


# -------- spectral library --------
def _parse_float(token: str, where: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise NonFiniteValue(f"{where}: {token!r} is not a number")
    if not math.isfinite(v):
        raise NonFiniteValue(f"{where}: non-finite value {token!r}")
    return v


def load_spectral_library(path: str) -> SpectralLibrary:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = [r for r in csv.reader(f) if any(c.strip() for c in r)]
    except OSError as e:
        raise IoFailure(f"cannot read spectral library {path}: {e}")
    if len(rows) < 2:
        raise EmptyLibrary(f"{path} needs a header row and a kind row")
    header = [c.strip() for c in rows[0]]
    kinds = [c.strip().lower() for c in rows[1]]
    if not header or header[0].lower() != "wavelength_um":
        raise MalformedHeader(f"{path}: first column must be 'wavelength_um'")
    names = header[1:]
    if not names:
        raise EmptyLibrary(f"{path} has no spectrum columns")
    seen = set()
    for n in names:
        if n in seen:
            raise DuplicateName(f"duplicate library entry name: {n!r}")
        seen.add(n)
    width = len(header)
    if len(kinds) != width:
        raise RaggedRows(f"{path}: kind row has {len(kinds)} cells, header has {width}")
    body = rows[2:]
    if not body:
        raise EmptyLibrary(f"{path} has no wavelength rows")
    values = np.empty((len(body), width), dtype=np.float64)
    for i, row in enumerate(body):
        if len(row) != width:
            raise RaggedRows(f"{path}: row {i + 3} has {len(row)} cells, header has {width}")
        for j, cell in enumerate(row):
            values[i, j] = _parse_float(cell.strip(), f"{path} row {i + 3} column {j + 1}")
    entries = tuple(
        LibraryEntry(name=n, kind=kinds[j + 1], spectrum=values[:, j + 1]) for j, n in enumerate(names)
    )
    return SpectralLibrary(wavelengths=values[:, 0], entries=entries)


def write_spectral_library(library: SpectralLibrary, path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["wavelength_um"] + library.names)
            w.writerow(["kind"] + [e.kind for e in library.entries])
            for i, wl in enumerate(library.wavelengths):
                w.writerow([repr(float(wl))] + [repr(float(e.spectrum[i])) for e in library.entries])
    except OSError as e:
        raise IoFailure(f"cannot write spectral library {path}: {e}")


def mask_library(library: SpectralLibrary, mask: BandMask) -> SpectralLibrary:
    if mask.keep.size != library.wavelengths.size:
        raise LengthMismatch(f"mask has {mask.keep.size} entries for a {library.wavelengths.size}-band library")
    return SpectralLibrary(
        wavelengths=library.wavelengths[mask.keep],
        entries=tuple(LibraryEntry(e.name, e.kind, e.spectrum[mask.keep]) for e in library.entries),
    )


def match_grid(library: SpectralLibrary, wavelengths: Sequence[float], atol: float = 1e-9) -> SpectralLibrary:
    """Return `library` if it sits on exactly the given grid, else raise GridMismatch."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    if library.wavelengths.size != wl.size:
        raise GridMismatch(
            f"library has {library.wavelengths.size} wavelengths, cube has {wl.size}; resampling is not supported"
        )
    if not np.allclose(library.wavelengths, wl, rtol=0.0, atol=atol):
        worst = int(np.argmax(np.abs(library.wavelengths - wl)))
        raise GridMismatch(
            f"library wavelength {library.wavelengths[worst]} differs from cube wavelength {wl[worst]} at band {worst}"
        )
    return library


__all__ = [
    "HyperCube",
    "BandMask",
    "LibraryEntry",
    "SpectralLibrary",
    "BACKGROUND_LABEL",
    "parse_header",
    "load_cube",
    "write_envi",
    "write_cube",
    "load_band_mask",
    "apply_band_mask",
    "compose_masks",
    "load_spectral_library",
    "write_spectral_library",
    "mask_library",
    "match_grid",
]
