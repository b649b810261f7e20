"""
Scene statistics, eigendecomposition and truncated whitening transforms.

The decomposition is computed once per scene; a rank-k whitening transform is
always the first k columns of the full one, so every rank in a sweep shares the
same principal-component ordering.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .cube_io import HyperCube
from .errors import (
    DegenerateScene,
    LengthMismatch,
    ModelFormatError,
    NotConverged,
    NotPSD,
    NumericalError,
    RankTooHigh,
    RankZero,
    IoFailure,
)
from .telemetry.events import log_event

logger = logging.getLogger("app.pca")

# Eigenvalues at or below λ₁·RANK_FLOOR count as zero.
RANK_FLOOR = 1e-12
# Negative eigenvalues down to -PSD_TOLERANCE·λmax are rounding noise and clamp to 0.
PSD_TOLERANCE = 1e-10
# A whitened vector no longer than ZERO_FLOOR·‖W_k‖₂·‖a−μ‖ is rounding residue and snaps to 0.
ZERO_FLOOR = 1e-12

HSWM_MAGIC = b"HSWM"
HSWM_VERSION = 1
_HSWM_HEADER = struct.Struct("<4sIII")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SceneStats:
    mean: np.ndarray
    covariance: np.ndarray
    pixel_count: int

    @property
    def bands(self) -> int:
        return self.mean.size

    @property
    def degenerate(self) -> bool:
        """True when there are too few pixels for a full-rank sample covariance."""
        return self.pixel_count < self.bands + 1


@dataclass(frozen=True)
class EigenModel:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def bands(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class WhiteningModel:
    mean: np.ndarray
    transform: np.ndarray
    retained_eigenvalues: np.ndarray

    @property
    def rank(self) -> int:
        return self.transform.shape[1]

    @property
    def bands(self) -> int:
        return self.transform.shape[0]

    @cached_property
    def gain(self) -> float:
        """Spectral norm ‖W_k‖₂."""
        return float(np.linalg.norm(self.transform, 2))


@dataclass(frozen=True)
class WhitenedCube:
    data: np.ndarray  # (lines, samples, k)

    @property
    def lines(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def rank(self) -> int:
        return self.data.shape[2]


def compute_stats(cube: HyperCube) -> SceneStats:
    """Per-band mean and 1/(N-1) sample covariance over every pixel.

    The accumulation uses einsum's fixed loop order so results do not depend
    on BLAS threading.
    """
    n = cube.pixel_count
    if n < 2:
        raise DegenerateScene(f"scene has {n} pixel(s); covariance needs at least 2")
    x = cube.pixels()
    mean = x.mean(axis=0)
    centered = x - mean
    cov = np.einsum("pi,pj->ij", centered, centered) / (n - 1)
    cov = (cov + cov.T) / 2.0
    stats = SceneStats(mean=_readonly(mean), covariance=_readonly(cov), pixel_count=n)
    if stats.degenerate:
        logger.warning("scene has %d pixels for %d bands; covariance is rank-deficient", n, stats.bands)
    log_event(logger, "stats_computed", pixels=n, bands=stats.bands, degenerate=stats.degenerate)
    return stats


def eigendecompose(stats: SceneStats) -> EigenModel:
    """Symmetric eigendecomposition with descending order and a fixed sign rule.

    Sign rule: the largest-magnitude component of every eigenvector is
    positive (first such component on ties).
    """
    try:
        lam, vec = np.linalg.eigh(stats.covariance)
    except np.linalg.LinAlgError as e:
        raise NotConverged(f"eigendecomposition did not converge: {e}")
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(vec))):
        raise NotConverged("eigendecomposition produced non-finite values")
    scale = max(float(np.abs(lam).max()), np.finfo(np.float64).tiny)
    if float(lam.min()) < -PSD_TOLERANCE * scale:
        raise NotPSD(f"covariance has eigenvalue {float(lam.min()):.3e} below -{PSD_TOLERANCE}·λmax")
    lam = np.where(lam < 0.0, 0.0, lam)

    order = np.lexsort((np.arange(lam.size), -lam))
    lam = lam[order]
    vec = vec[:, order]

    pivots = np.argmax(np.abs(vec), axis=0)
    signs = np.where(vec[pivots, np.arange(vec.shape[1])] < 0.0, -1.0, 1.0)
    vec = vec * signs

    model = EigenModel(eigenvalues=_readonly(np.ascontiguousarray(lam)), eigenvectors=_readonly(np.ascontiguousarray(vec)))
    log_event(logger, "eigendecomposed", bands=lam.size, usable_rank=usable_rank(model), top=lam[:3])
    return model


def usable_rank(model: EigenModel) -> int:
    """Number of eigenvalues above the rank-truncation floor."""
    lam = model.eigenvalues
    if lam.size == 0 or lam[0] <= 0.0:
        return 0
    return int(np.count_nonzero(lam > lam[0] * RANK_FLOOR))


def explained_variance(model) -> np.ndarray:
    """Cumulative fraction of total variance captured by the first i+1 PCs.

    Accepts an EigenModel or a WhiteningModel (whose dropped eigenvalues are
    below the rank floor and do not count).
    """
    lam = model.eigenvalues if isinstance(model, EigenModel) else model.retained_eigenvalues
    total = float(lam.sum())
    if total <= 0.0:
        return np.zeros_like(lam)
    return np.cumsum(lam) / total


def whitening_matrix(model: EigenModel, mean: np.ndarray, k: int) -> WhiteningModel:
    """W_k = first k eigenvectors, column i scaled by 1/sqrt(λ_i)."""
    usable = usable_rank(model)
    if usable == 0:
        raise RankZero("scene covariance is zero; nothing to whiten")
    if k < 1:
        raise RankZero(f"rank must be at least 1, got {k}")
    if k > usable:
        raise RankTooHigh(f"rank {k} exceeds the {usable} numerically nonzero eigenvalues")
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (model.bands,):
        raise LengthMismatch(f"mean has {mean.size} values for {model.bands} bands")
    lam = model.eigenvalues[:k]
    w = model.eigenvectors[:, :k] / np.sqrt(lam)
    return WhiteningModel(
        mean=_readonly(mean.copy()),
        transform=_readonly(np.ascontiguousarray(w)),
        retained_eigenvalues=_readonly(lam.copy()),
    )


def full_whitening(model: EigenModel, mean: np.ndarray) -> WhiteningModel:
    return whitening_matrix(model, mean, usable_rank(model))


def truncate(model: WhiteningModel, k: int) -> WhiteningModel:
    """Rank-k model from a higher-rank one by dropping trailing columns."""
    if k < 1:
        raise RankZero(f"rank must be at least 1, got {k}")
    if k > model.rank:
        raise RankTooHigh(f"rank {k} exceeds the stored model rank {model.rank}")
    return WhiteningModel(
        mean=model.mean,
        transform=_readonly(np.ascontiguousarray(model.transform[:, :k])),
        retained_eigenvalues=_readonly(model.retained_eigenvalues[:k].copy()),
    )


def whiten(model: WhiteningModel, spectrum: np.ndarray) -> np.ndarray:
    """Wᵀ(a − μ); exactly zero when a has no component in the retained subspace."""
    a = np.asarray(spectrum, dtype=np.float64)
    if a.shape != (model.bands,):
        raise LengthMismatch(f"spectrum has {a.size} values for a {model.bands}-band model")
    centered = a - model.mean
    out = np.einsum("b,bk->k", centered, model.transform)
    if not np.all(np.isfinite(out)):
        raise NumericalError("whitened spectrum is not finite")
    floor = ZERO_FLOOR * model.gain * float(np.sqrt(np.einsum("b,b->", centered, centered)))
    if float(np.sqrt(np.einsum("k,k->", out, out))) <= floor:
        return np.zeros_like(out)
    return out


def whiten_cube(model: WhiteningModel, cube: HyperCube) -> WhitenedCube:
    if cube.bands != model.bands:
        raise LengthMismatch(f"cube has {cube.bands} bands; model expects {model.bands}")
    centered = cube.pixels() - model.mean
    out = np.einsum("pb,bk->pk", centered, model.transform)
    floor = ZERO_FLOOR * model.gain * np.sqrt(np.einsum("pb,pb->p", centered, centered))
    out[np.sqrt(np.einsum("pk,pk->p", out, out)) <= floor] = 0.0
    return WhitenedCube(data=_readonly(out.reshape(cube.lines, cube.samples, model.rank)))


# -------- HSWM sidecar --------
def dump_whitening_model(model: WhiteningModel) -> bytes:
    """Serialize as: magic, version, k, bands, then little-endian f8 μ, λ, W (row-major)."""
    head = _HSWM_HEADER.pack(HSWM_MAGIC, HSWM_VERSION, model.rank, model.bands)
    return b"".join(
        (
            head,
            model.mean.astype("<f8").tobytes(),
            model.retained_eigenvalues.astype("<f8").tobytes(),
            np.ascontiguousarray(model.transform).astype("<f8").tobytes(),
        )
    )


def parse_whitening_model(blob: bytes) -> WhiteningModel:
    if len(blob) < _HSWM_HEADER.size:
        raise ModelFormatError("whitening model blob is truncated")
    magic, version, k, bands = _HSWM_HEADER.unpack_from(blob)
    if magic != HSWM_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}; expected {HSWM_MAGIC!r}")
    if version != HSWM_VERSION:
        raise ModelFormatError(f"unsupported whitening model version {version}")
    expected = _HSWM_HEADER.size + 8 * (bands + k + bands * k)
    if len(blob) != expected:
        raise ModelFormatError(f"whitening model blob has {len(blob)} bytes; expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=_HSWM_HEADER.size).astype(np.float64)
    mean = values[:bands]
    lam = values[bands:bands + k]
    w = values[bands + k:].reshape(bands, k)
    return WhiteningModel(mean=_readonly(mean.copy()), transform=_readonly(w.copy()), retained_eigenvalues=_readonly(lam.copy()))


def save_whitening_model(model: WhiteningModel, path: str) -> None:
    try:
        with open(path, "wb") as f:
            f.write(dump_whitening_model(model))
    except OSError as e:
        raise IoFailure(f"cannot write whitening model {path}: {e}")


def load_whitening_model(path: str) -> WhiteningModel:
    try:
        with open(path, "rb") as f:
            return parse_whitening_model(f.read())
    except OSError as e:
        raise IoFailure(f"cannot read whitening model {path}: {e}")


__all__ = [
    "SceneStats",
    "EigenModel",
    "WhiteningModel",
    "WhitenedCube",
    "compute_stats",
    "eigendecompose",
    "usable_rank",
    "explained_variance",
    "whitening_matrix",
    "full_whitening",
    "truncate",
    "whiten",
    "whiten_cube",
    "dump_whitening_model",
    "parse_whitening_model",
    "save_whitening_model",
    "load_whitening_model",
]
