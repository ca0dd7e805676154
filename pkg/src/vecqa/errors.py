"""Exception types shared across the engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


class FormatError(EngineError):
    """Malformed input file (corpus line, store header, script entry)."""


class DuplicateIdError(FormatError):
    """Two records claim the same passage id."""


class EmptyCorpusError(EngineError):
    """An operation that needs at least one passage got none."""


class NotFoundError(EngineError):
    """Lookup of an unknown passage id or token."""


class DimMismatchError(EngineError):
    """Vector dimensionality disagrees with the declared dimension."""


class BackendError(EngineError):
    """Model backend failure (transport, protocol, or unsupported request)."""


class ContextOverflowError(BackendError):
    """Prompt plus requested tokens exceed the model's context window."""


class CandidateParseError(EngineError):
    """Model reply did not contain any recognizable candidate markers.

    Carries the raw reply so callers can log or retry.
    """

    def __init__(self, message: str, reply: str = ""):
        super().__init__(message)
        self.reply = reply


class NoEvidenceError(EngineError):
    """First-stage retrieval returned nothing for the question."""


class RefinementSkippedError(EngineError):
    """No positive passages were labeled; refinement training cannot run.

    Callers fall back to the unrefined query embedding.
    """


class ConfigError(EngineError):
    """Invalid run configuration (bad key, bad value, or inconsistent pair)."""
