"""Embedding, exact top-k retrieval and on-disk persistence of the corpus index."""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import urllib.error
import urllib.request
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .chunker import ChunkObject, validate_relevance
from .errors import (
    CorruptIndex,
    DimensionMismatch,
    DuplicateHash,
    EmbedderUnavailable,
    FingerprintMismatch,
    RelevanceViolation,
)

DEFAULT_DIM = 256
EMBED_URL_ENV = "COMPRAG_EMBED_URL"

# Similarities equal to this many decimals are ties (broken by hash).
TIE_DECIMALS = 12

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


class Embedder(Protocol):
    dim: int

    @property
    def fingerprint(self) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def _l2_normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder:
    """Feature-hashed term frequencies, optionally L2-normalized.

    Texts without any word token embed to the zero vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM, normalize: bool = True):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.normalize = normalize
        self._buckets: dict[str, int] = {}

    @property
    def fingerprint(self) -> str:
        return f"hashing-tf/v1:dim={self.dim}:norm={'l2' if self.normalize else 'none'}"

    def _row(self, text: str) -> np.ndarray:
        row = np.zeros(self.dim)
        for token, n in Counter(tokenize(text)).items():
            b = self._buckets.get(token)
            if b is None:
                b = self._buckets[token] = _bucket(token, self.dim)
            row[b] += n
        return row

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        matrix = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            matrix[i] = self._row(text)
        return _l2_normalize(matrix) if self.normalize else matrix

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return self.embed_batch([text])[0]


class BagOfWordsEmbedder:
    """Exact (collision-free) bag-of-words over a fixed vocabulary.

    Reference mode for checking the hashed embedder; out-of-vocabulary
    tokens are ignored.
    """

    def __init__(self, vocabulary: Iterable[str], normalize: bool = True):
        self.vocabulary = sorted(set(vocabulary))
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")
        self._pos = {tok: i for i, tok in enumerate(self.vocabulary)}
        self.dim = len(self.vocabulary)
        self.normalize = normalize

    @classmethod
    def from_texts(cls, texts: Iterable[str], normalize: bool = True) -> BagOfWordsEmbedder:
        return cls({tok for t in texts for tok in tokenize(t)}, normalize=normalize)

    @property
    def fingerprint(self) -> str:
        vocab_id = hashlib.sha256("\n".join(self.vocabulary).encode("utf-8")).hexdigest()[:16]
        return f"bow/v1:vocab={vocab_id}:dim={self.dim}:norm={'l2' if self.normalize else 'none'}"

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        matrix = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for tok in tokenize(text):
                j = self._pos.get(tok)
                if j is not None:
                    matrix[i, j] += 1
        return _l2_normalize(matrix) if self.normalize else matrix

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return self.embed_batch([text])[0]


class RemoteEmbedder:
    """Client for an HTTP embedding service.

    Wire protocol: ``POST {"texts": [...]}`` answered by
    ``{"vectors": [[...], ...]}``, one vector of length ``dim`` per text.
    """

    def __init__(
        self,
        url: str | None = None,
        dim: int = DEFAULT_DIM,
        normalize: bool = True,
        timeout: float = 10.0,
        batch_size: int = 64,
    ):
        url = url or os.environ.get(EMBED_URL_ENV)
        if not url:
            raise EmbedderUnavailable(f"no embedder endpoint configured (set {EMBED_URL_ENV})")
        self.url = url
        self.dim = dim
        self.normalize = normalize
        self.timeout = timeout
        self.batch_size = batch_size

    @property
    def fingerprint(self) -> str:
        return f"remote/v1:{self.url}:dim={self.dim}:norm={'l2' if self.normalize else 'none'}"

    def _post(self, texts: Sequence[str]) -> list[Any]:
        payload = json.dumps({"texts": list(texts)}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise EmbedderUnavailable(f"embedder at {self.url} failed: {exc}") from exc
        vectors = data.get("vectors") if isinstance(data, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbedderUnavailable(f"embedder at {self.url} returned a malformed response")
        return vectors

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for start in range(0, len(texts), self.batch_size):
            rows.extend(self._post(texts[start : start + self.batch_size]))
        if not rows:
            return np.zeros((0, self.dim))
        for row in rows:
            if not isinstance(row, list) or len(row) != self.dim:
                got = len(row) if isinstance(row, list) else type(row).__name__
                raise DimensionMismatch(f"expected vectors of length {self.dim}, got {got}")
        try:
            matrix = np.asarray(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise EmbedderUnavailable(f"embedder at {self.url} returned non-numeric vectors") from exc
        if not np.all(np.isfinite(matrix)):
            raise EmbedderUnavailable(f"embedder at {self.url} returned non-finite values")
        return _l2_normalize(matrix) if self.normalize else matrix

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return self.embed_batch([text])[0]


def embedder_from_fingerprint(fingerprint: str) -> Embedder:
    """Recreate a local embedder from its fingerprint (hashing mode only)."""
    m = re.fullmatch(r"hashing-tf/v1:dim=(\d+):norm=(l2|none)", fingerprint)
    if not m:
        raise FingerprintMismatch(f"cannot reconstruct an embedder for fingerprint {fingerprint!r}")
    return HashingEmbedder(dim=int(m.group(1)), normalize=m.group(2) == "l2")


@dataclass(frozen=True)
class SemanticHit:
    chunk_hash: str
    similarity: float


@dataclass(frozen=True, eq=False)
class CorpusIndex:
    """Chunks and their vectors, stored in ascending hash order.

    ``matrix[i]`` is the vector of ``hashes[i]``.
    """

    hashes: tuple[str, ...]
    chunks: dict[str, ChunkObject]
    matrix: np.ndarray
    embedder_fingerprint: str
    dim: int
    _row: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.embedder_fingerprint:
            raise ValueError("embedder_fingerprint must be non-empty")
        if list(self.hashes) != sorted(self.hashes):
            raise ValueError("hashes must be sorted")
        if set(self.hashes) != set(self.chunks) or len(self.hashes) != len(self.chunks):
            raise ValueError("chunk and vector key sets differ")
        if self.matrix.shape != (len(self.hashes), self.dim):
            raise ValueError(f"matrix shape {self.matrix.shape} != ({len(self.hashes)}, {self.dim})")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite vector entries")
        self.matrix.setflags(write=False)
        object.__setattr__(self, "_row", {h: i for i, h in enumerate(self.hashes)})

    def __len__(self) -> int:
        return len(self.hashes)

    def vector(self, chunk_hash: str) -> np.ndarray:
        return self.matrix[self._row[chunk_hash]]

    @property
    def vectors(self) -> dict[str, np.ndarray]:
        return {h: self.matrix[i] for i, h in enumerate(self.hashes)}


def build_index(chunks: Sequence[ChunkObject], embedder: Embedder | None = None) -> CorpusIndex:
    embedder = embedder or HashingEmbedder()
    seen: set[str] = set()
    for c in chunks:
        if c.hash in seen:
            raise DuplicateHash(f"hash {c.hash} appears more than once")
        seen.add(c.hash)
    violations = validate_relevance(chunks)
    if violations:
        v = violations[0]
        raise RelevanceViolation(f"{len(violations)} relevance violation(s); first: {v.rule} on {v.chunk_hash}")

    ordered = sorted(chunks, key=lambda c: c.hash)
    matrix = embedder.embed_batch([c.body for c in ordered]) if ordered else np.zeros((0, embedder.dim))
    if matrix.shape != (len(ordered), embedder.dim):
        raise DimensionMismatch(f"embedder returned shape {matrix.shape}")
    return CorpusIndex(
        hashes=tuple(c.hash for c in ordered),
        chunks={c.hash: c for c in ordered},
        matrix=np.ascontiguousarray(matrix, dtype=np.float64),
        embedder_fingerprint=embedder.fingerprint,
        dim=embedder.dim,
    )


def _resolve_embedder(index: CorpusIndex, embedder: Embedder | None) -> Embedder:
    if embedder is None:
        return embedder_from_fingerprint(index.embedder_fingerprint)
    if embedder.fingerprint != index.embedder_fingerprint:
        raise FingerprintMismatch(
            f"index built with {index.embedder_fingerprint!r}, query embedder is {embedder.fingerprint!r}"
        )
    return embedder


def cosine_scores(index: CorpusIndex, query_vec: np.ndarray) -> np.ndarray:
    qn = float(np.linalg.norm(query_vec))
    if qn == 0.0 or len(index) == 0:
        return np.zeros(len(index))
    # Row-wise multiply-then-sum gives bitwise-equal scores for equal rows.
    dots = np.sum(index.matrix * query_vec, axis=1)
    norms = np.linalg.norm(index.matrix, axis=1)
    sims = np.divide(dots, norms * qn, out=np.zeros_like(dots), where=norms > 0)
    return np.clip(sims, -1.0, 1.0)


def retrieve(
    index: CorpusIndex, query: str, k: int, embedder: Embedder | None = None
) -> list[SemanticHit]:
    """Exhaustive top-``k`` by cosine similarity, ties by ascending hash."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    embedder = _resolve_embedder(index, embedder)
    sims = cosine_scores(index, embedder.embed(query))
    keys = np.round(sims, TIE_DECIMALS)
    # Rows are already in hash order, so a stable sort on -score is the tie-break.
    order = np.argsort(-keys, kind="stable")[:k]
    return [SemanticHit(index.hashes[i], float(sims[i])) for i in order]


# --- persistence -----------------------------------------------------------
#
# Layout (all integers big-endian):
#   magic   8 bytes  b"CRAGIDX\x00"
#   version u16
#   hlen    u64      length of the JSON header
#   header  hlen bytes, canonical JSON: fingerprint, dim, count, chunks
#   vectors count*dim float64 little-endian, rows in header chunk order
#   digest  32 bytes SHA-256 of everything above

MAGIC = b"CRAGIDX\x00"
FORMAT_VERSION = 1
_DIGEST_LEN = 32


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def index_to_bytes(index: CorpusIndex) -> bytes:
    header = _canonical_json(
        {
            "fingerprint": index.embedder_fingerprint,
            "dim": index.dim,
            "count": len(index),
            "chunks": [index.chunks[h].to_dict() for h in index.hashes],
        }
    )
    body = (
        MAGIC
        + struct.pack(">HQ", FORMAT_VERSION, len(header))
        + header
        + index.matrix.astype("<f8").tobytes()
    )
    return body + hashlib.sha256(body).digest()


def index_from_bytes(data: bytes) -> CorpusIndex:
    fixed = len(MAGIC) + struct.calcsize(">HQ")
    if len(data) < fixed + _DIGEST_LEN:
        raise CorruptIndex("index file is truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise CorruptIndex("not an index file (bad magic)")
    body, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptIndex("checksum mismatch")
    version, hlen = struct.unpack(">HQ", data[len(MAGIC) : fixed])
    if version != FORMAT_VERSION:
        raise CorruptIndex(f"unsupported index version {version}")
    try:
        header = json.loads(body[fixed : fixed + hlen].decode("utf-8"))
        dim, count = int(header["dim"]), int(header["count"])
        chunks = [ChunkObject.from_dict(c) for c in header["chunks"]]
        raw = body[fixed + hlen :]
        if len(raw) != count * dim * 8 or len(chunks) != count:
            raise CorruptIndex("vector block size does not match header")
        matrix = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(count, dim)
        return CorpusIndex(
            hashes=tuple(c.hash for c in chunks),
            chunks={c.hash: c for c in chunks},
            matrix=matrix,
            embedder_fingerprint=header["fingerprint"],
            dim=dim,
        )
    except CorruptIndex:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptIndex(f"malformed index header: {exc}") from exc


def save_index(index: CorpusIndex, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(index_to_bytes(index))
    os.replace(tmp, path)


def load_index(path: str | Path, expected_fingerprint: str | None = None) -> CorpusIndex:
    """Read an index file, rejecting it if built under a different embedder."""
    index = index_from_bytes(Path(path).read_bytes())
    if expected_fingerprint is not None and index.embedder_fingerprint != expected_fingerprint:
        raise FingerprintMismatch(
            f"index built with {index.embedder_fingerprint!r}, active embedder is {expected_fingerprint!r}"
        )
    return index


def export_json(index: CorpusIndex) -> dict[str, Any]:
    """Inspectable dump of an index (not used for loading)."""
    return {
        "fingerprint": index.embedder_fingerprint,
        "dim": index.dim,
        "chunks": [
            {**index.chunks[h].to_dict(), "vector": index.matrix[i].tolist()}
            for i, h in enumerate(index.hashes)
        ],
    }
