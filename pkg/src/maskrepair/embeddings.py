"""Word-embedding store: loading, cosine queries, and global similarity statistics.

Two on-disk formats are supported:

* text — one record per line, ``word c1 c2 ... cD``, UTF-8, whitespace
  separated decimal floats (the format counter-fitted vector releases use);
* cache — a binary file: magic ``MDEF``, then format version, vocabulary
  size V and dimension D as little-endian u32, then V words each prefixed
  with a little-endian u32 UTF-8 byte length, then V*D little-endian
  float32 components, row-major, rows unit-normalized.

Rows are unit-normalized (float64) at load regardless of source format, so
cosine similarity is a plain dot product. The store is immutable after load
and all queries are read-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

CACHE_MAGIC = b"MDEF"
CACHE_VERSION = 1

# Words drawn at random pairs when estimating the global cosine statistics.
DEFAULT_SAMPLED_PAIRS = 10_000_000
DEFAULT_STATS_SEED = 42
DEFAULT_EXACT_CAP = 5000

_SAMPLE_CHUNK = 1_000_000


class EmbeddingError(ValueError):
    """Raised on malformed embedding data."""


class UnknownWordError(KeyError):
    """Lookup of a word that is not in the embedding vocabulary."""


@dataclass(frozen=True)
class LoadReport:
    loaded: int
    duplicates: int
    skipped_lines: int


class EmbeddingStore:
    """Vocabulary plus unit-normalized word vectors.

    Lookups are case-folded. Vocabulary indices form a bijection onto
    ``range(len(store))``; duplicate words in the source keep their first
    occurrence.
    """

    def __init__(self, words: Iterable[str], matrix: np.ndarray):
        words = list(words)
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(words):
            raise EmbeddingError("vector matrix does not match vocabulary size")
        norms = np.linalg.norm(matrix, axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
            raise EmbeddingError("vectors must be finite and non-zero")
        self.vocab: dict[str, int] = {}
        for i, word in enumerate(words):
            folded = word.casefold()
            if folded in self.vocab:
                raise EmbeddingError(f"duplicate word after case-folding: {folded!r}")
            self.vocab[folded] = i
        self.words = tuple(word.casefold() for word in words)
        self.vectors = matrix / norms[:, None]
        self.dim = int(matrix.shape[1])

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self.vocab

    def index(self, word: str) -> int:
        try:
            return self.vocab[word.casefold()]
        except KeyError:
            raise UnknownWordError(word) from None

    def vector(self, word: str) -> np.ndarray:
        return self.vectors[self.index(word)]

    def cosine(self, a: str, b: str) -> float:
        """Cosine similarity of two vocabulary words; raises UnknownWordError."""
        return float(np.dot(self.vectors[self.index(a)], self.vectors[self.index(b)]))


def load_embeddings(
    source: str | Path | BinaryIO, format: str = "text"
) -> tuple[EmbeddingStore, LoadReport]:
    """Load a store from a path or binary stream in the given format."""
    if format not in ("text", "cache"):
        raise ValueError(f"unknown embedding format: {format!r}")
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            return load_embeddings(handle, format)
    if format == "text":
        return _parse_text(source)
    return _read_cache(source)


def _parse_text(stream: BinaryIO) -> tuple[EmbeddingStore, LoadReport]:
    words: list[str] = []
    seen: set[str] = set()
    rows: list[np.ndarray] = []
    dim: int | None = None
    duplicates = 0
    skipped = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8").strip()
        if not line:
            skipped += 1
            continue
        fields = line.split()
        word, components = fields[0], fields[1:]
        if not components:
            raise EmbeddingError(f"line {lineno}: record has no vector components")
        if dim is None:
            dim = len(components)
        elif len(components) != dim:
            raise EmbeddingError(
                f"line {lineno}: expected {dim} components, found {len(components)}"
            )
        try:
            row = np.array([float(c) for c in components], dtype=np.float64)
        except ValueError:
            raise EmbeddingError(f"line {lineno}: non-numeric vector component") from None
        if not np.all(np.isfinite(row)):
            raise EmbeddingError(f"line {lineno}: non-finite vector component")
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            raise EmbeddingError(f"line {lineno}: zero vector cannot be normalized")
        folded = word.casefold()
        if folded in seen:
            duplicates += 1
            continue
        seen.add(folded)
        words.append(folded)
        rows.append(row)
    if not words:
        raise EmbeddingError("empty vocabulary: no parseable embedding records")
    store = EmbeddingStore(words, np.stack(rows))
    return store, LoadReport(loaded=len(words), duplicates=duplicates, skipped_lines=skipped)


def write_cache(store: EmbeddingStore, dest: str | Path | BinaryIO) -> None:
    """Write the binary cache format (float32 rows, already normalized)."""
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as handle:
            write_cache(store, handle)
        return
    dest.write(CACHE_MAGIC)
    dest.write(struct.pack("<III", CACHE_VERSION, len(store), store.dim))
    ordered = sorted(store.vocab.items(), key=lambda item: item[1])
    for word, _ in ordered:
        encoded = word.encode("utf-8")
        dest.write(struct.pack("<I", len(encoded)))
        dest.write(encoded)
    dest.write(store.vectors.astype("<f4").tobytes(order="C"))


def _read_cache(stream: BinaryIO) -> tuple[EmbeddingStore, LoadReport]:
    magic = stream.read(4)
    if magic != CACHE_MAGIC:
        raise EmbeddingError(f"bad cache magic: {magic!r}")
    header = stream.read(12)
    if len(header) != 12:
        raise EmbeddingError("truncated cache header")
    version, count, dim = struct.unpack("<III", header)
    if version != CACHE_VERSION:
        raise EmbeddingError(f"unsupported cache version: {version}")
    if count == 0:
        raise EmbeddingError("empty vocabulary: cache contains no words")
    words = []
    for _ in range(count):
        prefix = stream.read(4)
        if len(prefix) != 4:
            raise EmbeddingError("truncated cache word table")
        (length,) = struct.unpack("<I", prefix)
        encoded = stream.read(length)
        if len(encoded) != length:
            raise EmbeddingError("truncated cache word table")
        words.append(encoded.decode("utf-8"))
    payload = stream.read(count * dim * 4)
    if len(payload) != count * dim * 4:
        raise EmbeddingError("truncated cache vector block")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
    store = EmbeddingStore(words, matrix)
    return store, LoadReport(loaded=count, duplicates=0, skipped_lines=0)


@dataclass(frozen=True)
class SimilarityStats:
    """Mean and standard deviation of pairwise cosine similarity.

    Computed over unordered distinct word pairs; self-pairs are excluded
    unless the caller asked for them. ``method`` is ``exact`` or ``sampled``;
    sampled runs record the seed that reproduces them.
    """

    mu: float
    sigma: float
    method: str
    pair_count: int
    seed: int | None = None


def similarity_stats(
    store: EmbeddingStore,
    mode: str = "exact",
    pair_count: int = DEFAULT_SAMPLED_PAIRS,
    seed: int = DEFAULT_STATS_SEED,
    exact_cap: int = DEFAULT_EXACT_CAP,
    include_diagonal: bool = False,
) -> SimilarityStats:
    """Global cosine statistics without materializing the V x V matrix.

    Exact mode streams every unordered pair (refused above ``exact_cap``
    words); sampled mode draws ``pair_count`` uniform distinct pairs with
    the given seed and is bit-reproducible.
    """
    vectors = store.vectors
    count = len(store)
    if count < 2:
        raise EmbeddingError("similarity statistics need at least two words")
    if mode == "exact":
        if count > exact_cap:
            raise EmbeddingError(
                f"exact statistics refused for {count} words (cap {exact_cap}); "
                "use sampled mode"
            )
        total = 0.0
        total_sq = 0.0
        pairs = 0
        block = 512
        for start in range(0, count, block):
            rows = vectors[start : start + block]
            sims = rows @ vectors.T
            for offset in range(rows.shape[0]):
                i = start + offset
                tail = sims[offset, i + 1 :]
                total += float(tail.sum())
                total_sq += float((tail * tail).sum())
                pairs += tail.size
        if include_diagonal:
            total += count
            total_sq += count
            pairs += count
        mu = total / pairs
        variance = max(total_sq / pairs - mu * mu, 0.0)
        return SimilarityStats(mu=mu, sigma=float(np.sqrt(variance)), method="exact", pair_count=pairs)
    if mode == "sampled":
        if pair_count < 1000:
            raise ValueError("sampled mode requires pair_count >= 1000")
        rng = np.random.default_rng(seed)
        total = 0.0
        total_sq = 0.0
        remaining = pair_count
        while remaining > 0:
            chunk = min(remaining, _SAMPLE_CHUNK)
            left = rng.integers(0, count, size=chunk)
            right = rng.integers(0, count - 1, size=chunk)
            right = right + (right >= left)  # uniform over j != i
            sims = np.einsum("ij,ij->i", vectors[left], vectors[right])
            total += float(sims.sum())
            total_sq += float((sims * sims).sum())
            remaining -= chunk
        mu = total / pair_count
        variance = max(total_sq / pair_count - mu * mu, 0.0)
        return SimilarityStats(
            mu=mu, sigma=float(np.sqrt(variance)), method="sampled", pair_count=pair_count, seed=seed
        )
    raise ValueError(f"unknown statistics mode: {mode!r}")


def threshold_value(stats: SimilarityStats, alpha: float) -> float:
    """Replacement cutoff mu + alpha * sigma, recomputed on every call."""
    return stats.mu + alpha * stats.sigma


@dataclass(frozen=True)
class SimilarityCheck:
    """Outcome of one similarity gate query, with a diagnostic reason."""

    passed: bool
    reason: str  # "ok" | "not-in-vocab" | "below-threshold"
    missing: str | None = None
    cosine: float | None = None


def similarity_check(
    store: EmbeddingStore,
    stats: SimilarityStats,
    alpha: float,
    original: str,
    candidate: str,
) -> SimilarityCheck:
    """Gate a candidate replacement: both words in-vocabulary and cosine above cutoff."""
    if original not in store:
        return SimilarityCheck(False, "not-in-vocab", missing=original)
    if candidate not in store:
        return SimilarityCheck(False, "not-in-vocab", missing=candidate)
    value = store.cosine(original, candidate)
    if value >= threshold_value(stats, alpha):
        return SimilarityCheck(True, "ok", cosine=value)
    return SimilarityCheck(False, "below-threshold", cosine=value)


def is_similar(
    store: EmbeddingStore,
    stats: SimilarityStats,
    alpha: float,
    original: str,
    candidate: str,
) -> bool:
    return similarity_check(store, stats, alpha, original, candidate).passed
