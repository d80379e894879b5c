"""Exception types raised across the package.

Everything derives from :class:`DicError` so callers can catch one base
class at the API boundary.  Names describe the condition, not the module
that raised it.
"""

from __future__ import annotations


class DicError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DicError):
    """A parameter set or configuration file is invalid or inconsistent."""


class ImageIoError(DicError):
    """An image file could not be read or written."""


class UnsupportedFormat(DicError):
    """The file is not an 8/16-bit single-channel PGM or grayscale TIFF."""


class BorderTooLarge(DicError):
    """A border exclusion consumes the whole image."""


class EmptyGrid(DicError):
    """No subset center fits inside the region of interest."""


class ImageTooSmall(DicError):
    """The image is smaller than the operation's minimum support."""


class OutOfDomain(DicError):
    """Interpolation was requested outside the safe evaluation domain."""


class DegenerateSubset(DicError):
    """A subset has (near-)zero intensity variance and cannot be matched."""


class SeedFailed(DicError):
    """The seed point (or its whole first neighborhood) failed to converge."""


class AllInvalid(DicError):
    """Every point of an initial displacement field was rejected."""


class NonInvertibleSpec(DicError):
    """A synthetic deformation specification is not invertible."""


class RankDeficient(DicError):
    """A window's valid points cannot determine the fit coefficients."""


class SingularDeformation(DicError):
    """A deformation gradient is singular or has non-positive determinant."""


class GridTooSmall(DicError):
    """The displacement grid is smaller than one strain window."""


class NoCrossing(DicError):
    """A bias profile never crosses its detection threshold."""


class TooFewEntries(DicError):
    """A summary statistic was requested over too few values."""


class NoMatch(DicError):
    """A file glob pattern matched nothing."""


class ParseError(DicError):
    """A results file is malformed."""


class BadMagic(DicError):
    """A binary results file does not start with the expected magic bytes."""


class VersionMismatch(DicError):
    """A binary results file has an unsupported format version."""


class TruncatedFile(DicError):
    """A binary results file ended before all declared payload was read."""
