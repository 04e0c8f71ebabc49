"""Correlate chunk hashes with an external ranking and re-rank semantic hits.

The external (out-of-model) system supplies a filtration list: object keys
with a desirability score. ``correlate`` binds every chunk hash in an index
to the filtration entry of its object, and ``evaluate`` uses those bindings
to filter or re-order the hits that semantic retrieval produced.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any

from .errors import DuplicateKey, EmptyFiltrationWarning, NonFiniteScore, PolicyInvalid
from .hashing import assign_hash, canonical_key
from .index import CorpusIndex, SemanticHit

__all__ = [
    "assign_hash",
    "canonical_key",
    "FiltrationEntry",
    "FiltrationList",
    "Binding",
    "CorrelationMap",
    "Mode",
    "MissingPolicy",
    "EvaluatorPolicy",
    "EvaluatedHit",
    "ingest_filtration",
    "load_filtration",
    "save_filtration",
    "correlate",
    "evaluate",
    "CORRELATION_SCHEMA",
]


@dataclass(frozen=True)
class FiltrationEntry:
    object_key: str
    score: float
    rank: int


@dataclass(frozen=True)
class FiltrationList:
    entries: tuple[FiltrationEntry, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        for i, e in enumerate(self.entries):
            if e.rank != i + 1:
                raise ValueError("ranks must be 1..N in list order")
            if i and (self.entries[i - 1].score, e.object_key) < (e.score, self.entries[i - 1].object_key):
                raise ValueError("entries must be sorted by descending score, then ascending key")
        if len({canonical_key(e.object_key) for e in self.entries}) != len(self.entries):
            raise DuplicateKey("object keys must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def lookup(self, object_key: str) -> FiltrationEntry | None:
        return self._by_key.get(canonical_key(object_key))

    @property
    def _by_key(self) -> dict[str, FiltrationEntry]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {canonical_key(e.object_key): e for e in self.entries}
            object.__setattr__(self, "_cache", cache)
        return cache

    def normalized(self, score: float) -> Fraction:
        """Exact min-max position of ``score`` among the list's scores.

        A list whose scores are all equal (including a single entry) maps
        every score to 1.
        """
        lo = Fraction(self.entries[-1].score)
        hi = Fraction(self.entries[0].score)
        if hi == lo:
            return Fraction(1)
        return (Fraction(score) - lo) / (hi - lo)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [
                {"object_key": e.object_key, "score": e.score, "rank": e.rank} for e in self.entries
            ]
        }


def ingest_filtration(raw: Iterable[Any]) -> FiltrationList:
    """Sort scored entries into a ranked list.

    ``raw`` yields ``(object_key, score)`` pairs or mappings with those two
    fields. Order is by descending score, ties by ascending key; ranks are
    assigned after sorting, so input order does not matter.
    """
    pairs: list[tuple[str, float]] = []
    seen: dict[str, str] = {}
    for item in raw:
        if isinstance(item, Mapping):
            key, score = item["object_key"], item["score"]
        else:
            key, score = item
        if not isinstance(key, str) or not key.strip():
            raise ValueError(f"invalid object_key {key!r}")
        if isinstance(score, bool):
            raise NonFiniteScore(f"score for {key!r} is not a number")
        try:
            score = float(score)
        except (TypeError, ValueError) as exc:
            raise NonFiniteScore(f"score for {key!r} is not a number") from exc
        if not math.isfinite(score):
            raise NonFiniteScore(f"score for {key!r} is not finite: {score}")
        ck = canonical_key(key)
        if ck in seen:
            raise DuplicateKey(f"object key {key!r} duplicates {seen[ck]!r}")
        seen[ck] = key
        pairs.append((key, score))
    if not pairs:
        warnings.warn("empty filtration list", EmptyFiltrationWarning, stacklevel=2)
    pairs.sort(key=lambda p: (-p[1], p[0]))
    return FiltrationList(
        tuple(FiltrationEntry(key, score, rank) for rank, (key, score) in enumerate(pairs, start=1))
    )


def load_filtration(path: str | Path) -> FiltrationList:
    """Read ``{"entries": [{"object_key": ..., "score": ...}, ...]}``.

    Any ``rank`` fields in the file are ignored and recomputed.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise ValueError(f"{path}: expected an object with an 'entries' list")
    return ingest_filtration(data["entries"])


def save_filtration(flist: FiltrationList, path: str | Path) -> None:
    Path(path).write_text(json.dumps(flist.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Binding:
    object_key: str
    rank: int
    score: float


@dataclass(frozen=True)
class CorrelationMap:
    bindings: dict[str, Binding] = field(default_factory=dict)
    unmatched_hashes: frozenset[str] = frozenset()
    unmatched_keys: frozenset[str] = frozenset()

    def knows(self, chunk_hash: str) -> bool:
        return chunk_hash in self.bindings or chunk_hash in self.unmatched_hashes

    def to_dict(self) -> dict[str, Any]:
        return {
            "bindings": {
                h: {"object_key": b.object_key, "rank": b.rank, "score": b.score}
                for h, b in sorted(self.bindings.items())
            },
            "unmatched_hashes": sorted(self.unmatched_hashes),
            "unmatched_keys": sorted(self.unmatched_keys),
        }


CORRELATION_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["bindings", "unmatched_hashes", "unmatched_keys"],
    "additionalProperties": False,
    "properties": {
        "bindings": {
            "type": "object",
            "propertyNames": {"pattern": "^[0-9a-f]{32}$"},
            "additionalProperties": {
                "type": "object",
                "required": ["object_key", "rank", "score"],
                "additionalProperties": False,
                "properties": {
                    "object_key": {"type": "string", "minLength": 1},
                    "rank": {"type": "integer", "minimum": 1},
                    "score": {"type": "number"},
                },
            },
        },
        "unmatched_hashes": {
            "type": "array",
            "uniqueItems": True,
            "items": {"type": "string", "pattern": "^[0-9a-f]{32}$"},
        },
        "unmatched_keys": {"type": "array", "uniqueItems": True, "items": {"type": "string"}},
    },
}


def correlate(index: CorpusIndex, flist: FiltrationList) -> CorrelationMap:
    bindings: dict[str, Binding] = {}
    unmatched: set[str] = set()
    used: set[str] = set()
    for h in index.hashes:
        entry = flist.lookup(index.chunks[h].object_key)
        if entry is None:
            unmatched.add(h)
        else:
            bindings[h] = Binding(entry.object_key, entry.rank, entry.score)
            used.add(entry.object_key)
    return CorrelationMap(
        bindings=bindings,
        unmatched_hashes=frozenset(unmatched),
        unmatched_keys=frozenset(e.object_key for e in flist if e.object_key not in used),
    )


class Mode(str, Enum):
    PASS_THROUGH = "pass_through"
    FILTER = "filter"
    FUSE = "fuse"


class MissingPolicy(str, Enum):
    DROP = "drop"
    KEEP_ZERO = "keep_zero"
    KEEP_SEMANTIC = "keep_semantic"


@dataclass(frozen=True)
class EvaluatorPolicy:
    """How the ranking affects semantic hits.

    ``cutoff_m=None`` means unlimited. For hits whose object has no ranking
    entry, ``keep_zero`` assigns a deterministic score of 0 and
    ``keep_semantic`` substitutes the hit's own normalized similarity, so a
    fused score reduces to the semantic one.
    """

    mode: Mode = Mode.FUSE
    alpha: float = 0.5
    cutoff_m: int | None = None
    missing_policy: MissingPolicy = MissingPolicy.KEEP_SEMANTIC

    def validate(self) -> EvaluatorPolicy:
        try:
            mode = Mode(self.mode)
            missing = MissingPolicy(self.missing_policy)
        except ValueError as exc:
            raise PolicyInvalid(str(exc)) from exc
        if isinstance(self.alpha, bool) or not isinstance(self.alpha, (int, float)):
            raise PolicyInvalid(f"alpha must be a number, got {self.alpha!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise PolicyInvalid(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.cutoff_m is not None and (
            isinstance(self.cutoff_m, bool) or not isinstance(self.cutoff_m, int) or self.cutoff_m < 1
        ):
            raise PolicyInvalid(f"cutoff_m must be a positive integer or None, got {self.cutoff_m!r}")
        return EvaluatorPolicy(mode, float(self.alpha), self.cutoff_m, missing)


@dataclass(frozen=True)
class EvaluatedHit:
    chunk_hash: str
    object_key: str
    semantic: float
    deterministic: float
    fused: float
    final_rank: int
    rank: int | None = None  # filtration rank, None when unmatched

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_hash": self.chunk_hash,
            "object_key": self.object_key,
            "semantic": self.semantic,
            "deterministic": self.deterministic,
            "fused": self.fused,
            "final_rank": self.final_rank,
            "filtration_rank": self.rank,
        }


def semantic_norm(similarity: float) -> Fraction:
    return (Fraction(similarity) + 1) / 2


def evaluate(
    hits: Sequence[SemanticHit],
    cmap: CorrelationMap,
    flist: FiltrationList,
    policy: EvaluatorPolicy,
    object_keys: Mapping[str, str] | None = None,
) -> list[EvaluatedHit]:
    """Apply ``policy`` to semantic hits and return the re-ranked survivors.

    Scores are combined in exact rational arithmetic and only rounded to
    float for the returned fields, so fuse-mode ordering is not disturbed by
    rounding (e.g. ``alpha=1`` orders exactly by similarity).

    ``object_keys`` maps hash to object key for unmatched hits (bound hits
    take their key from the binding); without it unmatched hits report an
    empty key.
    """
    policy = policy.validate()
    alpha = Fraction(policy.alpha)
    rows = []
    for hit in hits:
        if not cmap.knows(hit.chunk_hash):
            raise ValueError(f"hit {hit.chunk_hash} is not in the correlation map")
        sn = semantic_norm(hit.similarity)
        b = cmap.bindings.get(hit.chunk_hash)
        if b is not None:
            det = flist.normalized(b.score)
            key, rank = b.object_key, b.rank
        else:
            if policy.missing_policy is MissingPolicy.DROP and policy.mode is not Mode.PASS_THROUGH:
                continue
            det = sn if policy.missing_policy is MissingPolicy.KEEP_SEMANTIC else Fraction(0)
            key, rank = (object_keys or {}).get(hit.chunk_hash, ""), None
        if policy.mode is Mode.FILTER and rank is not None and policy.cutoff_m is not None:
            if rank > policy.cutoff_m:
                continue
        fused = alpha * sn + (1 - alpha) * det
        rows.append((hit, key, det, fused, rank))

    if policy.mode is Mode.FUSE:
        rows.sort(key=lambda r: (-r[3], r[0].chunk_hash))

    return [
        EvaluatedHit(hit.chunk_hash, key, hit.similarity, float(det), float(fused), i, rank)
        for i, (hit, key, det, fused, rank) in enumerate(rows, start=1)
    ]
