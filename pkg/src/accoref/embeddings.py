"""Precomputed token-embedding tables: binary file I/O and hashed stand-ins.

The file format (magic ``ACNE``) stores one vector per (doc_key, token)
pair. Missing lookups raise instead of returning zeros: a silent zero would
corrupt every span representation built on top of it.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .corpus import Document

MAGIC = b"ACNE"
VERSION = 1

__all__ = [
    "MAGIC",
    "VERSION",
    "EmbeddingError",
    "MissingEmbeddingError",
    "EmbeddingTable",
    "write_embeddings",
    "load_embeddings",
    "hash_embeddings",
]


class EmbeddingError(ValueError):
    """Malformed embedding file."""


class MissingEmbeddingError(KeyError):
    """A (doc_key, token index) pair has no stored vector."""

    def __init__(self, doc_key: str, token: int):
        super().__init__(f"no embedding for doc {doc_key!r} token {token}")
        self.doc_key = doc_key
        self.token = token


class EmbeddingTable:
    def __init__(self, dimension: int):
        if dimension <= 0:
            raise EmbeddingError(f"dimension must be positive, got {dimension}")
        self.dimension = dimension
        self._vectors: dict[tuple[str, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, key: tuple[str, int]) -> bool:
        return key in self._vectors

    def put(self, doc_key: str, token: int, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise EmbeddingError(
                f"vector for ({doc_key!r}, {token}) has shape {vector.shape}, "
                f"expected ({self.dimension},)"
            )
        self._vectors[(doc_key, int(token))] = vector

    def lookup(self, doc_key: str, token: int) -> np.ndarray:
        try:
            return self._vectors[(doc_key, int(token))]
        except KeyError:
            raise MissingEmbeddingError(doc_key, token) from None

    def doc_matrix(self, doc_key: str, n_tokens: int) -> np.ndarray:
        """Stack vectors for tokens 0..n_tokens-1 of one document."""
        out = np.empty((n_tokens, self.dimension))
        for t in range(n_tokens):
            out[t] = self.lookup(doc_key, t)
        return out

    def items(self):
        return self._vectors.items()


def write_embeddings(path, table: EmbeddingTable) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, table.dimension, len(table)))
        for (doc_key, token), vec in table.items():
            encoded = doc_key.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", token))
            fh.write(vec.astype("<f8", copy=False).tobytes())


def load_embeddings(path) -> EmbeddingTable:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise EmbeddingError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        version, dimension, count = struct.unpack_from("<IIQ", blob, 4)
    except struct.error as exc:
        raise EmbeddingError(f"{path}: truncated header") from exc
    if version != VERSION:
        raise EmbeddingError(f"{path}: unsupported version {version}")
    table = EmbeddingTable(dimension)
    offset = 20
    for r in range(count):
        try:
            (key_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            doc_key = blob[offset : offset + key_len].decode("utf-8")
            offset += key_len
            (token,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            vec = np.frombuffer(blob, dtype="<f8", count=dimension, offset=offset)
            offset += 8 * dimension
        except (struct.error, ValueError) as exc:
            raise EmbeddingError(f"{path}: truncated record {r} at byte {offset}") from exc
        table.put(doc_key, token, vec.astype(np.float64))
    return table


def _seeded_unit(dim: int, *key_parts) -> np.ndarray:
    digest = hashlib.blake2b("|".join(map(str, key_parts)).encode(), digest_size=8).digest()
    gen = np.random.default_rng(int.from_bytes(digest, "little"))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)

_WORD_MIX = 0.65
_SUBWORD_MIX = 0.70
_POSITION_MIX = 0.15
_POSITION_BUCKET = 10


def hash_embeddings(docs: list[Document], dimension: int, seed: int) -> EmbeddingTable:
    """Deterministic stand-in vectors keyed by word type, leading character
    and position bucket.

    The same (lowercased) word type always hashes to the same dominant
    direction, so repeated types stay close in cosine across documents while
    distinct types are near-orthogonal. A sub-word component (hash of the
    first character) gives morphologically related types a shared direction,
    loosely like the shared sub-word structure of learned embeddings, and a
    small positional component varies by token position.
    """
    table = EmbeddingTable(dimension)
    cache: dict[str, np.ndarray] = {}
    for doc in docs:
        for t, word in enumerate(doc.tokens):
            key = word.lower()
            base = cache.get(key)
            if base is None:
                base = _WORD_MIX * _seeded_unit(dimension, "w", seed, key)
                base += _SUBWORD_MIX * _seeded_unit(dimension, "c", seed, key[:1])
                cache[key] = base
            pos = _seeded_unit(dimension, "p", seed, t // _POSITION_BUCKET)
            vec = base + _POSITION_MIX * pos
            table.put(doc.doc_key, t, vec / np.linalg.norm(vec))
    return table
