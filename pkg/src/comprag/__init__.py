"""Retrieval-augmented generation with an evaluator that checks semantic hits
against a deterministic external ranking."""

from .chunker import (
    ChunkingConfig,
    ChunkObject,
    Document,
    Strategy,
    Violation,
    chunk_corpus,
    chunk_document,
    validate_relevance,
)
from .evaluator import (
    CorrelationMap,
    EvaluatedHit,
    EvaluatorPolicy,
    FiltrationEntry,
    FiltrationList,
    MissingPolicy,
    Mode,
    correlate,
    evaluate,
    ingest_filtration,
    load_filtration,
)
from .hashing import assign_hash, canonical_key
from .index import (
    BagOfWordsEmbedder,
    CorpusIndex,
    HashingEmbedder,
    RemoteEmbedder,
    SemanticHit,
    build_index,
    load_index,
    retrieve,
    save_index,
)
from .pipeline import AnswerBundle, QueryRequest, RemoteGenerator, answer, template_generate
from .recommender import MetricBounds, MetricRecord, MetricWeights, build_filtration, desirability

__version__ = "0.1.0"
