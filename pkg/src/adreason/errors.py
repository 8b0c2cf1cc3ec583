"""Exceptions raised by the memory, retrieval, tooling and evaluation layers.

Backend transport/auth failures live in :mod:`adreason.backends`.
"""

from __future__ import annotations


class AdreasonError(Exception):
    """Base class for non-backend errors in this package."""


class InvalidDuration(AdreasonError, ValueError):
    pass


class ZeroDuration(AdreasonError, ValueError):
    pass


class AssetError(AdreasonError):
    """A frame or image asset is missing or cannot be decoded."""


class TemplateParseError(AdreasonError):
    """A structured model reply lacked required fields, even after one repair prompt."""

    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


class NoFramesInRange(AdreasonError):
    pass


class EmptyDatabase(AdreasonError):
    pass


class MissingEmbedding(AdreasonError):
    pass


class DatabaseFormatError(AdreasonError):
    """On-disk database is missing files or has unreadable records."""


class BuildError(AdreasonError):
    """Database construction failed; ``stage`` names the pipeline stage."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class UnparseableVerdict(AdreasonError):
    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


class EmptyInput(AdreasonError, ValueError):
    pass


class TraceFormatError(AdreasonError, ValueError):
    """A trace file is truncated or holds records of the wrong shape."""
