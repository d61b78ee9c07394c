"""Exception types shared across the toolkit."""


class NassegError(Exception):
    """Base class for all toolkit errors."""


# --- tensor I/O ---

class MalformedHeaderError(NassegError):
    """NPY file has a bad magic string, version, or header dict."""


class UnsupportedDtypeError(NassegError):
    """NPY dtype is not little-endian f32/f64."""


class FortranOrderError(NassegError):
    """NPY file stores data in Fortran order; only C order is accepted."""


class IoFailure(NassegError):
    """Underlying file operation failed."""


class UnsupportedPngError(NassegError):
    """PNG is not 8-bit RGB/grayscale (e.g. 16-bit, palette with transparency)."""


# --- numeric contracts ---

class NonFiniteInputError(NassegError):
    """Input contains NaN or infinity where finite values are required."""


class ShapeMismatchError(NassegError):
    """Tensor shapes are inconsistent with the operation's contract."""


class DimensionMismatchError(NassegError):
    """Two inputs that must share dimensions do not."""


class LengthMismatchError(NassegError):
    """Aligned lists have different lengths."""


class TooFewRowsError(NassegError):
    """Not enough samples for the requested clustering."""


class BadKError(NassegError):
    """Requested cluster count is outside the valid range."""


class TooShortError(NassegError):
    """Score sequence too short to scale (needs at least two entries)."""


# --- oracle / gateway ---

class OracleFailure(NassegError):
    """An oracle query failed. ``step`` carries the deletion step when relevant."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NotPrecomputedError(OracleFailure):
    """File backend was asked for an image it has no stored answers for."""


class UnreachableError(OracleFailure):
    """Oracle endpoint could not be reached."""


class BadManifestError(NassegError):
    """Oracle manifest/meta is missing or inconsistent."""


class MetaMismatchError(NassegError):
    """Oracle meta disagrees with the expected (cached) meta."""


class EmptySplitWarning(UserWarning):
    """A correctness split contains no images; its table cells are NaN."""
