"""
Error types shared by every stage of the detection toolkit.

Each error carries the HTTP status used by app.main and the process exit code
used by app.cli, so both surfaces map failures the same way.
"""
from __future__ import annotations

from typing import Optional


class HyperspectralError(Exception):
    status_code: int = 500
    exit_code: int = 1

    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.message = message
        if status_code is not None:
            self.status_code = status_code


class InputError(HyperspectralError):
    """Bad or inconsistent input data (exit 2)."""

    status_code = 400
    exit_code = 2


class NumericalError(HyperspectralError):
    """A numerical stage could not produce a valid result (exit 3)."""

    status_code = 422
    exit_code = 3


class IoFailure(HyperspectralError):
    """Reading or writing an artifact failed (exit 4)."""

    status_code = 500
    exit_code = 4


# -------- input --------
class MalformedHeader(InputError):
    pass


class SizeMismatch(InputError):
    pass


class UnsupportedDataType(InputError):
    pass


class NonFiniteData(InputError):
    pass


class LengthMismatch(InputError):
    pass


class TooFewBands(InputError):
    pass


class DuplicateName(InputError):
    pass


class RaggedRows(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class EmptyLibrary(InputError):
    pass


class GridMismatch(InputError):
    pass


class UnknownEntry(InputError):
    pass


class SpecOutOfBounds(InputError):
    pass


class InvalidGrid(InputError):
    pass


class ReportPathRejected(InputError):
    """Report directory lies outside the configured report root."""


# -------- numerical --------
class DegenerateScene(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class RankTooHigh(NumericalError):
    pass


class RankZero(NumericalError):
    pass


class ZeroTarget(NumericalError):
    pass


class InsufficientBackground(NumericalError):
    pass


class ConstantSpectrum(NumericalError):
    pass


# -------- I/O --------
class ModelFormatError(IoFailure):
    pass


__all__ = [
    "HyperspectralError",
    "InputError",
    "NumericalError",
    "IoFailure",
    "MalformedHeader",
    "SizeMismatch",
    "UnsupportedDataType",
    "NonFiniteData",
    "LengthMismatch",
    "TooFewBands",
    "DuplicateName",
    "RaggedRows",
    "NonFiniteValue",
    "EmptyLibrary",
    "GridMismatch",
    "UnknownEntry",
    "SpecOutOfBounds",
    "InvalidGrid",
    "ReportPathRejected",
    "DegenerateScene",
    "NotConverged",
    "NotPSD",
    "RankTooHigh",
    "RankZero",
    "ZeroTarget",
    "InsufficientBackground",
    "ConstantSpectrum",
    "ModelFormatError",
]
