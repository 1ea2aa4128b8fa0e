"""Exception hierarchy shared across the package."""


class LmcError(Exception):
    """Base class for every error raised by lmclab."""


class ShapeError(LmcError, ValueError):
    """Dimension or architecture mismatch between operands."""


class ConvergenceError(LmcError, RuntimeError):
    pass


class DivergenceError(LmcError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


# --- file formats -----------------------------------------------------------

class FormatError(LmcError):
    """Base class for malformed on-disk data."""


class BadMagicError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class CorruptPayloadError(FormatError):
    pass


class ConfigError(LmcError, ValueError):
    """Invalid experiment configuration."""
