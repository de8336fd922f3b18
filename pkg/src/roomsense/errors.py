"""Exception hierarchy shared across the package.

CLI exit codes: usage errors map to 2, DataError to 3, NumericError to 4.
"""


class RoomsenseError(Exception):
    pass


class ShapeError(RoomsenseError):
    """Raised when tensor operands have incompatible shapes.

    Carries the op name and the offending shapes so callers can report
    exactly which operation failed.
    """

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GradientError(RoomsenseError):
    """Backward-pass misuse: non-scalar loss, missing grad, etc."""


class ConfigError(RoomsenseError):
    """Bad configuration value or malformed config file."""


class DataError(RoomsenseError):
    """Base for dataset I/O failures."""


class VersionError(DataError):
    """Dataset format version does not match the reader."""


class ChecksumError(DataError):
    """Stored checksum does not match the blob contents."""


class TruncatedError(DataError):
    """Blob ends before its declared payload."""


class NumericError(RoomsenseError):
    """Non-finite value encountered where finite math is required."""

    def __init__(self, msg, task=None):
        self.task = task
        super().__init__(msg)
