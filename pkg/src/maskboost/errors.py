"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MaskBoostError(Exception):
    """Base class for all errors raised by this package."""


class PlacementMismatch(MaskBoostError):
    """Template placement does not match presence/absence of a second text."""


class MultipleMasks(MaskBoostError):
    """Rendering would not produce exactly one mask literal occurrence."""


class TransportError(MaskBoostError):
    """HTTP transport failed after exhausting the retry budget."""


class ProtocolError(MaskBoostError):
    """The LM service returned a malformed or invalid response."""


class VocabMismatch(MaskBoostError):
    """Two components disagree on the vocabulary identifier."""


class CacheIoError(MaskBoostError):
    """A cache file is unreadable, corrupted, or cannot be written."""


class DimensionMismatch(MaskBoostError):
    """Array shapes do not line up (rows vs labels vs weights)."""


class NoValidCombination(MaskBoostError):
    """Token screening found no combination with distinct tokens."""


class ExhaustedRetries(MaskBoostError):
    """Boosting rejected the maximum number of consecutive prompt draws."""


class EmptyPromptPool(MaskBoostError):
    """An operation requiring at least one prompt received none."""


class MissingPromptRow(MaskBoostError):
    """Prediction needs a distribution row for a prompt that was not supplied."""


class InsufficientExamples(MaskBoostError):
    """The source dataset cannot supply the requested per-class sample count."""
