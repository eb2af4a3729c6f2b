"""Typed errors shared across the package.

Everything raised on purpose derives from :class:`SembError`, so callers
(including the CLI) can separate validation failures from genuine I/O
errors, which are left as the builtin ``OSError``.
"""


class SembError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SembError):
    """Malformed serialized data or a violated container invariant."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionMismatch(SembError):
    """Vectors of different dimensions where equal ones are required."""


class DuplicateItemId(SembError):
    """The same item id appears more than once in a gallery."""


class ZeroVector(SembError):
    """A (near-)zero vector where direction is required."""


class EmptyGallery(SembError):
    """Search against a gallery with no items."""


class MissingTruth(SembError):
    """A retrieval result has no ground-truth entry."""


class NoCaptions(SembError):
    """Text-retrieval evaluation found an image with no owned captions."""


class TemperatureNonPositive(SembError):
    """Softmax temperature must be strictly positive."""


class IncompleteSample(SembError):
    """A training sample is missing one of its required regions."""


class ConfigInvalid(SembError):
    """A training or CLI configuration value is out of range."""


class ImageTooSmall(SembError):
    """Image dimensions too small for the requested grid."""


class EmptyDataset(SembError):
    """An operation that needs at least one sample got none."""


class NoGlobalEmbedding(SembError):
    """An item lacks the single global-tagged embedding a report needs."""
