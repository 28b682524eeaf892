"""Exception hierarchy.

Each error class carries the process exit code the CLI reports for it.
"""

from __future__ import annotations


class BiofuseError(Exception):
    exit_code = 1


class ConfigError(BiofuseError, ValueError):
    """Bad configuration: unknown key, invalid value, impossible filter geometry."""

    exit_code = 2


class DataError(BiofuseError, ValueError):
    """Input data cannot be used as given."""

    exit_code = 3


class DecodeError(DataError):
    """Malformed image or model file. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        parts = []
        if path is not None:
            parts.append(str(path))
        if offset is not None:
            parts.append(f"byte offset {offset}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class IngestError(DataError):
    def __init__(self, message: str, paths=()):
        self.paths = [str(p) for p in paths]
        if self.paths:
            message = f"{message}: {', '.join(self.paths)}"
        super().__init__(message)


class InsufficientDataError(DataError):
    pass


class DimensionError(DataError):
    pass


class UnknownSubjectError(DataError, LookupError):
    pass
