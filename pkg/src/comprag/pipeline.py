"""End-to-end query flow: retrieve, correlate, evaluate, generate."""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

from .chunker import ChunkObject
from .errors import GeneratorUnavailable, UngroundedAnswer
from .evaluator import (
    EvaluatedHit,
    EvaluatorPolicy,
    FiltrationList,
    correlate,
    evaluate,
)
from .hashing import find_hashes
from .index import CorpusIndex, Embedder, retrieve

GEN_URL_ENV = "COMPRAG_GEN_URL"
NO_SUPPORTED_ANSWER = "No supported answer: no retrieved chunk passed the evaluator."


class Generator(Protocol):
    def __call__(
        self, query: str, evidence: Sequence[EvaluatedHit], chunks: Mapping[str, ChunkObject]
    ) -> str: ...


def template_generate(
    query: str,
    evidence: Sequence[EvaluatedHit],
    chunks: Mapping[str, ChunkObject] | None = None,
) -> str:
    """Deterministic stand-in for an LLM: lists the evidence in order, citing hashes."""
    if not evidence:
        return NO_SUPPORTED_ANSWER
    lines = [f"Results for: {query}"]
    for e in evidence:
        lines.append(
            f"{e.final_rank}. {e.object_key} [{e.chunk_hash}] "
            f"fused={e.fused:.4f} semantic={e.semantic:.4f} deterministic={e.deterministic:.4f}"
        )
    return "\n".join(lines)


class RemoteGenerator:
    """HTTP generator client.

    Wire protocol: ``POST {"query": str, "evidence": [{"hash", "object_key",
    "body"}]}`` answered by ``{"answer": str}``.
    """

    def __init__(self, url: str | None = None, timeout: float = 30.0):
        url = url or os.environ.get(GEN_URL_ENV)
        if not url:
            raise GeneratorUnavailable(f"no generator endpoint configured (set {GEN_URL_ENV})")
        self.url = url
        self.timeout = timeout

    def __call__(
        self, query: str, evidence: Sequence[EvaluatedHit], chunks: Mapping[str, ChunkObject]
    ) -> str:
        payload = {
            "query": query,
            "evidence": [
                {"hash": e.chunk_hash, "object_key": e.object_key, "body": chunks[e.chunk_hash].body}
                for e in evidence
            ],
        }
        req = urllib.request.Request(
            self.url,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise GeneratorUnavailable(f"generator at {self.url} failed: {exc}") from exc
        answer = data.get("answer") if isinstance(data, dict) else None
        if not isinstance(answer, str):
            raise GeneratorUnavailable(f"generator at {self.url} returned no 'answer' string")
        return answer


@dataclass(frozen=True)
class QueryRequest:
    query_text: str
    k: int = 5
    policy: EvaluatorPolicy = field(default_factory=EvaluatorPolicy)

    def __post_init__(self) -> None:
        if not self.query_text.strip():
            raise ValueError("query_text must be non-empty")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError("k must be a positive integer")


@dataclass(frozen=True)
class AnswerBundle:
    answer_text: str
    evidence: list[EvaluatedHit]
    unmatched_report: dict[str, Any]
    timings: dict[str, float]

    def __post_init__(self) -> None:
        check_grounding(self.answer_text, self.evidence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "answer_text": self.answer_text,
            "evidence": [e.to_dict() for e in self.evidence],
            "unmatched_report": self.unmatched_report,
            "timings": self.timings,
        }


def check_grounding(answer_text: str, evidence: Sequence[EvaluatedHit]) -> None:
    allowed = {e.chunk_hash for e in evidence}
    stray = [h for h in find_hashes(answer_text) if h not in allowed]
    if stray:
        raise UngroundedAnswer(f"answer cites hashes not in evidence: {sorted(set(stray))}")


def answer(
    index: CorpusIndex,
    flist: FiltrationList,
    req: QueryRequest,
    generator: Generator | None = None,
    embedder: Embedder | None = None,
) -> AnswerBundle:
    policy = req.policy.validate()
    generator = generator or template_generate

    t0 = time.perf_counter()
    hits = retrieve(index, req.query_text, req.k, embedder)
    t1 = time.perf_counter()
    cmap = correlate(index, flist)
    t2 = time.perf_counter()
    keys = {h.chunk_hash: index.chunks[h.chunk_hash].object_key for h in hits}
    evidence = evaluate(hits, cmap, flist, policy, object_keys=keys)
    t3 = time.perf_counter()
    if evidence:
        text = generator(req.query_text, evidence, index.chunks)
    else:
        text = NO_SUPPORTED_ANSWER
    t4 = time.perf_counter()

    timings = {
        "retrieve_ms": (t1 - t0) * 1e3,
        "correlate_ms": (t2 - t1) * 1e3,
        "evaluate_ms": (t3 - t2) * 1e3,
        "generate_ms": (t4 - t3) * 1e3,
    }
    unmatched_report = {
        "retrieved_unmatched": sorted(h.chunk_hash for h in hits if h.chunk_hash in cmap.unmatched_hashes),
        "unmatched_hash_count": len(cmap.unmatched_hashes),
        "unmatched_keys": sorted(cmap.unmatched_keys),
    }
    return AnswerBundle(text, evidence, unmatched_report, timings)
