"""Exception hierarchy for the retrieval engine.

Every failure mode the engine can signal deliberately gets its own class so
callers can catch precisely; all of them derive from :class:`EngineError`.
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


# embedding store ------------------------------------------------------------


class BadMagic(EngineError):
    """File does not start with a supported embedding-file header."""


class DimMismatch(EngineError):
    """Vector dimensions disagree (header vs. record, or between operands)."""


class DuplicateId(EngineError):
    """The same id occurs more than once in one index."""


class TruncatedFile(EngineError):
    """File length does not match the header's record accounting."""


class NonFiniteValue(EngineError):
    """An embedding contains NaN or infinity."""


class ZeroVector(EngineError):
    """An operation that needs a direction received the zero vector."""


# fusion ---------------------------------------------------------------------


class AlphaOutOfRange(EngineError):
    """Image/text fusion weight outside [0, 1]."""


class BetaOutOfRange(EngineError):
    """Caption fusion weight outside [0, 1]."""


# ranking --------------------------------------------------------------------


class EmptyGallery(EngineError):
    """No gallery items left to rank after exclusions."""


class UnknownId(EngineError):
    """A requested id does not exist in the index."""


# grid -----------------------------------------------------------------------


class IndexOutOfRange(EngineError):
    """Cell or label index outside the grid's 0..m*m-1 range."""


class EmptyImage(EngineError):
    """A raster with zero pixels was supplied."""


class WrongCount(EngineError):
    """Number of images does not match the grid capacity."""


# reranking ------------------------------------------------------------------


class DuplicateIndex(EngineError):
    """A candidate index occurs more than once in a permutation prefix."""


class LengthMismatch(EngineError):
    """Permutation length differs from the candidate-list length."""


# MLLM client ----------------------------------------------------------------


class MllmError(EngineError):
    """Base for chat-completion failures; carries the retries consumed."""

    def __init__(self, message: str, retry_count: int = 0):
        super().__init__(message)
        self.retry_count = retry_count


class ApiTimeout(MllmError):
    """Request exceeded the configured timeout."""


class ApiRefusal(MllmError):
    """Completion matched a safety-refusal marker."""


class EmptyCompletion(MllmError):
    """Backend returned an empty (or whitespace/quote-only) completion."""


class TransportError(MllmError):
    """Network, HTTP, or malformed-response failure."""


# metrics --------------------------------------------------------------------


class EmptyTargets(EngineError):
    """A query annotation carries no ground-truth target ids."""


class MissingRanking(EngineError):
    """An annotated query has no ranking to evaluate."""


class MissingSubset(EngineError):
    """A subset metric was requested for a query without subset ids."""


# pipeline -------------------------------------------------------------------


class MissingEmbedding(EngineError):
    """A required embedding is absent from its index; names the id."""

    def __init__(self, kind: str, item_id: str):
        super().__init__(f"no {kind} embedding for id {item_id!r}")
        self.kind = kind
        self.item_id = item_id


class MissingImage(EngineError):
    """An image id could not be resolved to a file."""
