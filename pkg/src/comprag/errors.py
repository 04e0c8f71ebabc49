"""Exception hierarchy shared across the package."""


class CompragError(Exception):
    """Base class for all package errors."""


# chunking
class ChunkingError(CompragError):
    pass


class MalformedRecord(ChunkingError):
    pass


class OversizedAtom(ChunkingError):
    pass


class ExternalSynthesizerUnavailable(ChunkingError):
    pass


# index
class IndexStoreError(CompragError):
    """Index build or persistence failure."""


class DuplicateHash(IndexStoreError):
    pass


class RelevanceViolation(IndexStoreError):
    pass


class CorruptIndex(IndexStoreError):
    pass


class FingerprintMismatch(IndexStoreError):
    pass


class DimensionMismatch(CompragError):
    pass


# remote services
class RemoteServiceError(CompragError):
    """A remote embedder or generator could not be used."""


class EmbedderUnavailable(RemoteServiceError):
    pass


class GeneratorUnavailable(RemoteServiceError):
    pass


class UngroundedAnswer(GeneratorUnavailable):
    """Generator cited a hash that is not in the evidence list."""


# evaluator / recommender
class DuplicateKey(CompragError):
    pass


class NonFiniteScore(CompragError):
    pass


class PolicyInvalid(CompragError):
    pass


class InvalidBounds(CompragError):
    pass


class InvalidMetric(CompragError):
    pass


class MissingColumn(CompragError):
    pass


class ConfigError(CompragError):
    pass


class EmptyFiltrationWarning(UserWarning):
    """An empty filtration list was ingested; every chunk will be unmatched."""
