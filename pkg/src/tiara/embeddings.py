"""Word-vector loading and tag embeddings.

A tag is split into maximal runs of alphabetic characters, each run is
lowercased and looked up in a word-vector table, and the tag vector is the
plain mean of the vectors that were found.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from numpy.typing import NDArray


class EmbeddingLoadError(ValueError):
    """Raised when a word-vector file cannot be parsed."""


class EmbeddingTable:
    """Immutable, case-insensitive map from word to a ``d``-dim float64 vector."""

    def __init__(self, entries: Mapping[str, NDArray[np.float64]], dim: int) -> None:
        if dim <= 0:
            raise ValueError(f"dimension must be positive, got {dim}")
        store: dict[str, NDArray[np.float64]] = {}
        for word, vec in entries.items():
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ValueError(f"vector for {word!r} has shape {arr.shape}, expected ({dim},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"vector for {word!r} has non-finite components")
            key = word.lower()
            if key in store:
                continue
            arr.setflags(write=False)
            store[key] = arr
        self._entries = MappingProxyType(store)
        self.dim = dim

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: object) -> bool:
        return isinstance(word, str) and word.lower() in self._entries

    def __getitem__(self, word: str) -> NDArray[np.float64]:
        return self._entries[word.lower()]

    def get(self, word: str) -> NDArray[np.float64] | None:
        return self._entries.get(word.lower())

    def words(self) -> list[str]:
        return list(self._entries)


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingTable:
    """Load a GloVe-style text file: ``word f1 f2 ... fd`` per line.

    The dimension is taken from the first line unless ``expected_dim`` is
    given, in which case every line must match it. Duplicate words keep
    their first occurrence. Blank lines are skipped.
    """
    if expected_dim is not None and expected_dim <= 0:
        raise ValueError(f"expected_dim must be positive, got {expected_dim}")
    entries: dict[str, NDArray[np.float64]] = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split(" ")
            word, values = fields[0], fields[1:]
            if not word:
                raise EmbeddingLoadError(f"empty word at line {lineno}")
            if dim is None:
                if not values:
                    raise EmbeddingLoadError(f"no vector components at line {lineno}")
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingLoadError(
                    f"dimension mismatch at line {lineno}: expected {dim}, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingLoadError(f"unparsable float at line {lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingLoadError(f"non-finite value at line {lineno}")
            entries.setdefault(word.lower(), vec)
    if not entries or dim is None:
        raise EmbeddingLoadError(f"empty embedding file: {path}")
    return EmbeddingTable(entries, dim)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write ``table`` in the text format read by :func:`load_embeddings`.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word in table.words():
            fh.write(word + " " + " ".join(repr(float(x)) for x in table[word]) + "\n")


def tokenize_tag(tag: str) -> list[str]:
    """Split ``tag`` into lowercase runs of alphabetic characters.

    >>> tokenize_tag("Aegean-Cat2")
    ['aegean', 'cat']
    """
    words: list[str] = []
    current: list[str] = []
    for ch in tag:
        if ch.isalpha():
            current.append(ch)
        elif current:
            words.append("".join(current).lower())
            current = []
    if current:
        words.append("".join(current).lower())
    return words


@dataclass(frozen=True)
class TagEmbedding:
    tag: str
    vector: NDArray[np.float64]
    oov_count: int
    word_count: int

    @property
    def covered(self) -> bool:
        """True if at least one word of the tag was in the vocabulary."""
        return self.oov_count < self.word_count


def embed_tag(tag: str, table: EmbeddingTable) -> TagEmbedding:
    """Mean of the in-vocabulary word vectors of ``tag``; zero vector if none."""
    words = tokenize_tag(tag)
    found = [vec for vec in (table.get(w) for w in words) if vec is not None]
    if found:
        vector = np.mean(np.stack(found), axis=0)
    else:
        vector = np.zeros(table.dim, dtype=np.float64)
    vector.setflags(write=False)
    return TagEmbedding(tag, vector, len(words) - len(found), len(words))


class TagEmbedder:
    """Memoizing ``tag -> vector`` lookup over an :class:`EmbeddingTable`.

    Safe to share between threads: concurrent misses on the same tag compute
    identical values, and the lock only guards the dict insert.
    """

    def __init__(self, table: EmbeddingTable) -> None:
        self.table = table
        self._cache: dict[str, TagEmbedding] = {}
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.table.dim

    def embedding(self, tag: str) -> TagEmbedding:
        hit = self._cache.get(tag)
        if hit is None:
            hit = embed_tag(tag, self.table)
            with self._lock:
                hit = self._cache.setdefault(tag, hit)
        return hit

    def __call__(self, tag: str) -> NDArray[np.float64]:
        return self.embedding(tag).vector


def coverage(tags: list[str] | set[str], table: EmbeddingTable) -> float:
    """Fraction of ``tags`` having at least one in-vocabulary word."""
    tags = list(tags)
    if not tags:
        return math.nan
    hits = sum(1 for t in tags if any(w in table for w in tokenize_tag(t)))
    return hits / len(tags)
