"""Exception hierarchy shared by every layer.

All failures raised on purpose derive from :class:`SummarizationError`
so that the command line can report them uniformly.
"""

from __future__ import annotations

from typing import Optional


class SummarizationError(Exception):
    """Base class for all expected failures."""


class ShapeError(SummarizationError):
    """Array dimensions do not agree."""


class NotPsdError(SummarizationError):
    """A matrix expected to be positive semidefinite could not be factorised."""


class InsufficientDataError(SummarizationError):
    """Too few samples or videos for the requested computation."""


class EmptyInputError(SummarizationError):
    """A sequence with zero frames was supplied."""


class ContractError(SummarizationError):
    """A documented precondition was violated by the caller."""


class NumericError(SummarizationError):
    """A computation produced or received non-finite values."""


class InvalidTargetError(SummarizationError):
    """A training target cannot be used (for example an empty keyframe set)."""


class SizeGuardError(SummarizationError):
    """An exhaustive routine was asked to enumerate too many subsets."""


class ConfigurationError(SummarizationError):
    """An experiment, split or dataset configuration is inconsistent."""


class UsageError(SummarizationError):
    """The command line was invoked with missing or invalid options."""


class ParseError(SummarizationError):
    """A file could not be parsed.

    Args:
        message (str): Human readable description.
        video_id (str, optional): Video the failing file belongs to.
        field (str, optional): Field or section that failed validation.
        offset (int, optional): Byte offset at which a binary file broke.
    """

    def __init__(
        self,
        message: str,
        video_id: Optional[str] = None,
        field: Optional[str] = None,
        offset: Optional[int] = None,
    ) -> None:
        self.video_id = video_id
        self.field = field
        self.offset = offset
        parts = [message]
        if video_id is not None:
            parts.append(f"video={video_id}")
        if field is not None:
            parts.append(f"field={field}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts))


class VersionError(ParseError):
    """A binary file carries an unsupported format version."""
