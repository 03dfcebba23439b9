"""Exception hierarchy shared by every module in the package.

Each error class carries a stable ``exit_code`` so the command line
interface can map failures to distinct process exit statuses without
string matching.  Code 1 is reserved for unexpected internal errors and
code 2 for argument parsing problems (argparse's convention).
"""

from __future__ import annotations

__all__ = [
    "McdManovaError",
    "DomainError",
    "DimensionError",
    "Unbalanced",
    "NonNumeric",
    "TooFewLevels",
    "MissingColumn",
    "EmptyTable",
    "SingularSubset",
    "NotPositiveDefinite",
    "DegenerateWeights",
    "CellWiped",
    "MissingCalibration",
    "CorruptCache",
    "MismatchedReports",
    "NonPositivePart",
]


class McdManovaError(Exception):
    """Base class for all errors raised deliberately by this package."""

    exit_code = 1


class DomainError(McdManovaError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    exit_code = 3


class DimensionError(McdManovaError, ValueError):
    """Array arguments have incompatible or unusable shapes."""

    exit_code = 4


class Unbalanced(McdManovaError):
    """Cell counts of a two-way table are not all equal."""

    exit_code = 5


class NonNumeric(McdManovaError):
    """A response value could not be read as a finite number."""

    exit_code = 6


class TooFewLevels(McdManovaError):
    """A factor has fewer than two observed levels."""

    exit_code = 7


class MissingColumn(McdManovaError):
    """A requested factor or response column is absent from the input."""

    exit_code = 8


class EmptyTable(McdManovaError):
    """The input table contains no data rows."""

    exit_code = 9


class SingularSubset(McdManovaError):
    """Every candidate subset (or the weighted sample) is rank deficient."""

    exit_code = 10


class NotPositiveDefinite(McdManovaError):
    """A matrix required to be positive definite is not."""

    exit_code = 11


class DegenerateWeights(McdManovaError):
    """Too few observations kept by the trimming weights."""

    exit_code = 12


class CellWiped(McdManovaError):
    """All observations of one cell received weight zero."""

    exit_code = 13


class MissingCalibration(McdManovaError):
    """No calibration entry is available for the requested design."""

    exit_code = 14


class CorruptCache(McdManovaError):
    """The calibration cache file cannot be parsed."""

    exit_code = 15


class MismatchedReports(McdManovaError):
    """Two experiment reports do not describe the same test."""

    exit_code = 16


class NonPositivePart(McdManovaError):
    """A compositional vector contains a zero or negative part."""

    exit_code = 17
