"""Turn object-record documents into size-bounded chunk-objects.

A document in the rule-based format is JSONL, one record per line::

    {"object_key": "Gio's", "properties": {"cuisine": "Italian"}, "text": "..."}

Each record is rendered to *source lines*: one ``key: value`` line per
property (in record order) followed by every non-blank line of ``text``.
Lines are the indivisible atoms of chunking. A record is packed greedily
into chunks of at most ``target_size`` whitespace tokens; a trailing
remainder that would still fit within ``target_size * (1 + tolerance)`` is
merged into the previous chunk instead of being emitted on its own.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import ExternalSynthesizerUnavailable, MalformedRecord, OversizedAtom
from .hashing import assign_hash


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class ChunkObject:
    hash: str
    object_key: str
    body: str
    properties: dict[str, str]
    token_count: int
    source_doc_id: str

    @classmethod
    def create(
        cls,
        object_key: str,
        body: str,
        properties: Mapping[str, str] | None = None,
        source_doc_id: str = "",
    ) -> ChunkObject:
        """Build a chunk with its hash and token count derived from the content."""
        return cls(
            hash=assign_hash(object_key, body),
            object_key=object_key,
            body=body,
            properties=dict(properties or {}),
            token_count=count_tokens(body),
            source_doc_id=source_doc_id,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "hash": self.hash,
            "object_key": self.object_key,
            "body": self.body,
            "properties": dict(self.properties),
            "token_count": self.token_count,
            "source_doc_id": self.source_doc_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ChunkObject:
        return cls(
            hash=data["hash"],
            object_key=data["object_key"],
            body=data["body"],
            properties=dict(data["properties"]),
            token_count=int(data["token_count"]),
            source_doc_id=data["source_doc_id"],
        )


class Strategy(str, Enum):
    RULE_BASED = "rule_based"
    EXTERNAL_SYNTHESIZER = "external_synthesizer"


@dataclass(frozen=True)
class ChunkingConfig:
    target_size: int = 64
    tolerance: float = 0.1
    strategy: Strategy = Strategy.RULE_BASED

    def __post_init__(self) -> None:
        if isinstance(self.target_size, bool) or not isinstance(self.target_size, int):
            raise ValueError("target_size must be an integer")
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if not 0.0 <= self.tolerance <= 1.0:
            raise ValueError("tolerance must lie in [0, 1]")
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    @property
    def size_limit(self) -> int:
        # Epsilon keeps e.g. 50 * 1.1 from flooring to 54.
        return math.floor(self.target_size * (1.0 + self.tolerance) + 1e-9)


# An external synthesizer (e.g. an LLM client) receives the document and the
# target size and returns records of {"object_key", "body", "properties"?}.
Synthesizer = Callable[[Document, int], Iterable[Mapping[str, Any]]]


@dataclass(frozen=True)
class ObjectRecord:
    object_key: str
    properties: dict[str, str]
    text: str

    def source_lines(self) -> list[str]:
        lines = [" ".join(f"{k}: {v}".split()) for k, v in self.properties.items()]
        lines.extend(" ".join(ln.split()) for ln in self.text.splitlines())
        return [ln for ln in lines if ln]


def _scalar(value: Any, where: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    raise MalformedRecord(f"{where}: property values must be strings, got {type(value).__name__}")


def parse_record(line: str, where: str = "record") -> ObjectRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{where}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise MalformedRecord(f"{where}: expected a JSON object")
    if "object_key" not in data or not isinstance(data["object_key"], str):
        raise MalformedRecord(f"{where}: missing object_key delimiter")
    unknown = set(data) - {"object_key", "properties", "text"}
    if unknown:
        raise MalformedRecord(f"{where}: unknown fields {sorted(unknown)}")
    props = data.get("properties", {})
    if not isinstance(props, dict):
        raise MalformedRecord(f"{where}: properties must be an object")
    text = data.get("text", "")
    if not isinstance(text, str):
        raise MalformedRecord(f"{where}: text must be a string")
    record = ObjectRecord(
        object_key=data["object_key"],
        properties={str(k): _scalar(v, where) for k, v in props.items()},
        text=text,
    )
    if not record.source_lines():
        raise MalformedRecord(f"{where}: record {record.object_key!r} has no properties or text")
    return record


def parse_records(text: str, doc_id: str = "document") -> list[ObjectRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            records.append(parse_record(line, where=f"{doc_id}:{lineno}"))
    if not records:
        raise MalformedRecord(f"{doc_id}: no records")
    return records


def _pack(lines: list[str], cfg: ChunkingConfig, object_key: str) -> list[list[str]]:
    counts = [count_tokens(ln) for ln in lines]
    limit = cfg.size_limit
    for ln, n in zip(lines, counts):
        if n > limit:
            raise OversizedAtom(
                f"{object_key!r}: line of {n} tokens exceeds limit {limit}: {ln[:60]!r}"
            )

    groups: list[list[str]] = []
    cur: list[str] = []
    size = 0
    i = 0
    while i < len(lines):
        n = counts[i]
        if cur and size + n > cfg.target_size:
            if size + sum(counts[i:]) <= limit:
                cur.extend(lines[i:])
                break
            groups.append(cur)
            cur, size = [], 0
        cur.append(lines[i])
        size += n
        i += 1
    if cur:
        groups.append(cur)
    return groups


def chunk_record(record: ObjectRecord, cfg: ChunkingConfig, doc_id: str) -> list[ChunkObject]:
    return [
        ChunkObject.create(record.object_key, "\n".join(group), record.properties, doc_id)
        for group in _pack(record.source_lines(), cfg, record.object_key)
    ]


def chunk_document(
    doc: Document,
    cfg: ChunkingConfig | None = None,
    synthesizer: Synthesizer | None = None,
) -> list[ChunkObject]:
    cfg = cfg or ChunkingConfig()
    if cfg.strategy is Strategy.EXTERNAL_SYNTHESIZER:
        if synthesizer is None:
            raise ExternalSynthesizerUnavailable("strategy=external_synthesizer but no synthesizer configured")
        return _chunk_external(doc, cfg, synthesizer)

    chunks: list[ChunkObject] = []
    for record in parse_records(doc.text, doc.doc_id):
        chunks.extend(chunk_record(record, cfg, doc.doc_id))
    return chunks


def _chunk_external(doc: Document, cfg: ChunkingConfig, synthesizer: Synthesizer) -> list[ChunkObject]:
    # Synthesized output gets the same size contract as rule-based output.
    chunks = []
    for item in synthesizer(doc, cfg.target_size):
        key = item.get("object_key")
        body = item.get("body")
        if not isinstance(key, str) or not isinstance(body, str):
            raise MalformedRecord(f"{doc.doc_id}: synthesizer returned an item without object_key/body")
        chunk = ChunkObject.create(key, body, item.get("properties") or {}, doc.doc_id)
        if chunk.token_count > cfg.size_limit:
            raise OversizedAtom(
                f"{doc.doc_id}: synthesized chunk for {key!r} has {chunk.token_count} tokens "
                f"(limit {cfg.size_limit})"
            )
        chunks.append(chunk)
    return chunks


def chunk_corpus(
    docs: Iterable[Document],
    cfg: ChunkingConfig | None = None,
    synthesizer: Synthesizer | None = None,
) -> list[ChunkObject]:
    seen: set[str] = set()
    chunks: list[ChunkObject] = []
    for doc in docs:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        chunks.extend(chunk_document(doc, cfg, synthesizer))
    return chunks


def read_document(path: str | Path) -> Document:
    """Load a JSONL record file as a single document named after the file."""
    path = Path(path)
    return Document(doc_id=path.stem, text=path.read_text(encoding="utf-8"), metadata={"path": str(path)})


@dataclass(frozen=True)
class Violation:
    chunk_hash: str
    rule: str
    detail: str = ""


EMPTY_OBJECT_KEY = "empty_object_key"
DUPLICATE_CHUNK = "duplicate_chunk"


def validate_relevance(chunks: Iterable[ChunkObject]) -> list[Violation]:
    """Report chunks that break the one-object-per-chunk contract.

    Rules: every chunk names a non-empty object key, and no ``(object_key,
    body)`` pair occurs twice (the second and later copies are reported).
    """
    report: list[Violation] = []
    seen: dict[tuple[str, str], str] = {}
    for chunk in chunks:
        if not chunk.object_key.strip():
            report.append(Violation(chunk.hash, EMPTY_OBJECT_KEY, "chunk has no object key"))
        pair = (chunk.object_key, chunk.body)
        if pair in seen:
            report.append(Violation(chunk.hash, DUPLICATE_CHUNK, f"duplicates chunk {seen[pair]}"))
        else:
            seen[pair] = chunk.hash
    return report
