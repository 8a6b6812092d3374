"""
errors.py

Exception hierarchy shared by every stage of the pipeline.

Input errors also subclass `ValueError` so callers that only care about "bad data" can
catch the builtin. Stage code catches `PipelineError` per video and records the failure
in the stage state instead of aborting the batch.
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


# --------------- Transcript input ---------------- #
class MalformedInput(PipelineError, ValueError):
    """Caption content that does not follow its format contract."""


class NegativeTime(MalformedInput):
    pass


class MalformedTimestamp(MalformedInput):
    pass


class MissingHeader(MalformedInput):
    pass


class OverlappingCueWarning(UserWarning):
    """Two cues overlap in time. Recorded, never fatal."""


# --------------- Manifest ---------------- #
class ManifestError(PipelineError, ValueError):
    pass


class DuplicateVideoId(ManifestError):
    pass


class MissingFile(ManifestError):
    pass


class UnknownFormatTag(ManifestError):
    pass


# --------------- LLM gateway ---------------- #
class BackendError(PipelineError):
    pass


class TransientBackendError(BackendError):
    """Timeout, rate limit or server-side failure; safe to retry."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BackendUnavailable(BackendError):
    pass


class AuthError(BackendError):
    pass


class ContextTooLong(BackendError):
    def __init__(self, message: str, size: int | None = None, budget: int | None = None):
        super().__init__(message)
        self.size = size
        self.budget = budget


class Unparseable(PipelineError, ValueError):
    pass


class RecordInvalid(PipelineError, ValueError):
    def __init__(self, message: str, fragment: str = ""):
        super().__init__(message)
        self.fragment = fragment


# --------------- Embeddings and keywords ---------------- #
class DimensionMismatch(PipelineError, ValueError):
    pass


class ZeroVector(PipelineError, ValueError):
    pass


class EmptyAfterPreprocess(PipelineError, ValueError):
    pass


class CombinatorialLimit(PipelineError):
    pass


class VideoWithoutKeywords(PipelineError):
    pass


# --------------- Analytics ---------------- #
class UnknownVideoId(PipelineError, KeyError):
    pass


class EmptyKeywordSet(PipelineError, ValueError):
    pass


class SpanOutOfRange(PipelineError, ValueError):
    pass


# --------------- Orchestration ---------------- #
class ConfigError(PipelineError):
    pass


class StagePreconditionError(PipelineError):
    def __init__(self, stage: str, missing: str):
        super().__init__(f"Stage '{stage}' requires '{missing}' to be Done for at least one video. Run '{missing}' first.")
        self.stage = stage
        self.missing = missing
