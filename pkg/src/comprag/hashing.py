"""Content hash tokens and object-key canonicalization."""

from __future__ import annotations

import hashlib
import re
import unicodedata

HASH_BYTES = 16
HASH_HEX_WIDTH = HASH_BYTES * 2
HASH_PATTERN = re.compile(rf"\b[0-9a-f]{{{HASH_HEX_WIDTH}}}\b")

_DOMAIN = b"comprag/chunk/v1"


def _field(text: str) -> bytes:
    data = unicodedata.normalize("NFC", text).encode("utf-8")
    return len(data).to_bytes(8, "big") + data


def assign_hash(object_key: str, body: str) -> str:
    """Return the 128-bit hex token identifying the pair ``(object_key, body)``.

    Both strings are NFC-normalized and length-prefixed before hashing, so
    ``("ab", "c")`` and ``("a", "bc")`` never share a token.
    """
    h = hashlib.blake2b(digest_size=HASH_BYTES, person=b"comprag-hash")
    h.update(_DOMAIN)
    h.update(_field(object_key))
    h.update(_field(body))
    return h.hexdigest()


def canonical_key(object_key: str) -> str:
    """Canonical form used to match chunk keys against ranking keys."""
    return unicodedata.normalize("NFC", object_key).casefold().strip()


def find_hashes(text: str) -> list[str]:
    """All hash-shaped tokens cited in ``text``, in order of appearance."""
    return HASH_PATTERN.findall(text)
