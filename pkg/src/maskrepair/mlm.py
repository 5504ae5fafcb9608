"""Masked-word prediction backends.

All backends answer the same question: mask the i-th word of a sentence and
report (a) the cross-entropy of the true word under the masked distribution
and (b) the top-k candidate words in descending probability. Implementations
must be deterministic: identical inputs produce identical predictions.

Two in-process backends live here. ``TableMlm`` replays a fixed lookup table
and exists for tests and small demos. ``CorpusMlm`` is an interpolated
unigram + left/right bigram model with add-k smoothing trained from a plain
text file, enough context sensitivity to make loss ranking meaningful
without a neural model. The adapter for external transformer graphs is in
``onnx_backend``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import TokenizedSentence, tokenize

# Probability assigned to a true word the backend has no mass for; keeps
# out-of-vocabulary (often attacked) words ranked as maximally important.
OOV_FLOOR = 1e-8

# Placeholder marking the masked slot in table context keys.
MASK_PLACEHOLDER = "_"

ADD_K = 0.1


@dataclass(frozen=True)
class MaskPrediction:
    """Masked-LM output for one position.

    ``loss`` is the cross-entropy of the true word in nats. ``candidates``
    are (word, probability) pairs in strictly descending probability with
    lexicographic tie-break, at most ``top_k`` of them.
    """

    position: int
    loss: float
    candidates: tuple[tuple[str, float], ...]


def _ranked(scores: dict[str, float], top_k: int) -> tuple[tuple[str, float], ...]:
    order = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return tuple(order[:top_k])


class MlmBackend:
    """Base contract for masked-word predictors.

    Subclasses implement ``predict_masked``; the batched form validates every
    position up front so one bad index fails the whole batch.
    """

    oov_floor: float = OOV_FLOOR

    def vocabulary(self) -> tuple[str, ...]:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary())

    def predict_masked(
        self, sentence: TokenizedSentence, position: int, top_k: int = 50
    ) -> MaskPrediction:
        raise NotImplementedError

    def batch_predict(
        self, sentence: TokenizedSentence, positions: Iterable[int], top_k: int = 50
    ) -> list[MaskPrediction]:
        positions = list(positions)
        nwords = len(sentence)
        for index, position in enumerate(positions):
            if not 0 <= position < nwords:
                raise IndexError(
                    f"batch position {position} (batch index {index}) out of range "
                    f"for {nwords}-word sentence"
                )
        return [self.predict_masked(sentence, position, top_k) for position in positions]

    def _check_query(self, sentence: TokenizedSentence, position: int, top_k: int) -> None:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        if not 0 <= position < len(sentence):
            raise IndexError(
                f"position {position} out of range for {len(sentence)}-word sentence"
            )

    def _loss(self, probability: float) -> float:
        if probability > 0.0:
            return -math.log(probability)
        return -math.log(self.oov_floor)


def context_key(words: Sequence[str], position: int) -> str:
    """Table lookup key: the sentence with the masked slot replaced by ``_``."""
    return " ".join(
        MASK_PLACEHOLDER if i == position else word for i, word in enumerate(words)
    )


class TableMlm(MlmBackend):
    """Deterministic table-driven backend.

    Maps a masked-context key (see ``context_key``) to a probability table
    over candidate words. Unknown contexts fall back to ``default`` when
    given, else to uniform over the vocabulary. Every table must sum to
    1 within 1e-6.
    """

    def __init__(
        self,
        entries: dict[str, dict[str, float]],
        default: dict[str, float] | None = None,
        oov_floor: float = OOV_FLOOR,
    ):
        self.oov_floor = oov_floor
        self._entries = {
            key.casefold(): {w.casefold(): float(p) for w, p in table.items()}
            for key, table in entries.items()
        }
        self._default = (
            {w.casefold(): float(p) for w, p in default.items()} if default else None
        )
        vocab: set[str] = set()
        tables = list(self._entries.values())
        if self._default is not None:
            tables.append(self._default)
        for table in tables:
            if not table:
                raise ValueError("empty candidate table")
            total = math.fsum(table.values())
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"candidate table sums to {total}, expected 1")
            if any(p < 0 for p in table.values()):
                raise ValueError("negative candidate probability")
            vocab.update(table)
        if not vocab:
            raise ValueError("table backend has an empty vocabulary")
        self._vocab = tuple(sorted(vocab))

    @classmethod
    def from_json(cls, path: str | Path) -> "TableMlm":
        with open(path, "r", encoding="utf-8") as handle:
            spec = json.load(handle)
        entries = {
            item["context"]: item["candidates"] for item in spec.get("entries", [])
        }
        return cls(entries, default=spec.get("default"))

    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    def scores(self, sentence: TokenizedSentence, position: int) -> dict[str, float]:
        key = context_key(sentence.words, position)
        table = self._entries.get(key, self._default)
        if table is None:
            uniform = 1.0 / len(self._vocab)
            return {word: uniform for word in self._vocab}
        return table

    def predict_masked(
        self, sentence: TokenizedSentence, position: int, top_k: int = 50
    ) -> MaskPrediction:
        self._check_query(sentence, position, top_k)
        scores = self.scores(sentence, position)
        loss = self._loss(scores.get(sentence.words[position], 0.0))
        return MaskPrediction(position, loss, _ranked(scores, top_k))


class CorpusMlm(MlmBackend):
    """Counting model over a training corpus: unigram + left/right bigram.

    The masked-word distribution is the equal-weight mean of the smoothed
    unigram distribution and, where the neighbor exists, the smoothed
    bigram distributions conditioned on the left and right neighbor. Add-k
    smoothing (k = 0.1) keeps every component a proper distribution even
    for unseen context words, so the mixture always sums to 1.
    """

    def __init__(self, sentences: Iterable[TokenizedSentence], oov_floor: float = OOV_FLOOR):
        self.oov_floor = oov_floor
        unigram: Counter[str] = Counter()
        after: dict[str, Counter[int]] = {}
        before: dict[str, Counter[int]] = {}
        tokenized = [s.words for s in sentences]
        for words in tokenized:
            unigram.update(words)
        if not unigram:
            raise ValueError("training corpus contains no words")
        self._vocab = tuple(sorted(unigram))
        self._index = {word: i for i, word in enumerate(self._vocab)}
        counts = np.zeros(len(self._vocab), dtype=np.float64)
        for word, count in unigram.items():
            counts[self._index[word]] = count
        self._unigram_counts = counts
        self._total = float(counts.sum())
        for words in tokenized:
            for prev, cur in zip(words, words[1:]):
                after.setdefault(prev, Counter())[self._index[cur]] += 1
            for cur, nxt in zip(words, words[1:]):
                before.setdefault(nxt, Counter())[self._index[cur]] += 1
        self._after = after
        self._before = before

    @classmethod
    def train(cls, source: str | Path | Iterable[str], oov_floor: float = OOV_FLOOR) -> "CorpusMlm":
        """Train from a UTF-8 text file or iterable of lines, one sentence each."""
        if isinstance(source, (str, Path)):
            with open(source, "r", encoding="utf-8") as handle:
                lines = [line.rstrip("\n") for line in handle]
        else:
            lines = list(source)
        sentences = [tokenize(line) for line in lines if line.strip()]
        return cls(sentences, oov_floor=oov_floor)

    def vocabulary(self) -> tuple[str, ...]:
        return self._vocab

    def _smoothed(self, table: Counter[int] | None) -> np.ndarray:
        size = len(self._vocab)
        dense = np.full(size, ADD_K, dtype=np.float64)
        total = ADD_K * size
        if table:
            for index, count in table.items():
                dense[index] += count
            total += sum(table.values())
        return dense / total

    def probabilities(self, sentence: TokenizedSentence, position: int) -> np.ndarray:
        """Masked distribution over ``vocabulary()`` at ``position``."""
        words = sentence.words
        parts = [(self._unigram_counts + ADD_K) / (self._total + ADD_K * len(self._vocab))]
        if position > 0:
            parts.append(self._smoothed(self._after.get(words[position - 1])))
        if position < len(words) - 1:
            parts.append(self._smoothed(self._before.get(words[position + 1])))
        return sum(parts) / len(parts)

    def predict_masked(
        self, sentence: TokenizedSentence, position: int, top_k: int = 50
    ) -> MaskPrediction:
        self._check_query(sentence, position, top_k)
        probabilities = self.probabilities(sentence, position)
        scores = {word: float(probabilities[i]) for i, word in enumerate(self._vocab)}
        true_word = sentence.words[position]
        if true_word in self._index:
            loss = self._loss(scores[true_word])
        else:
            loss = self._loss(0.0)
        return MaskPrediction(position, loss, _ranked(scores, top_k))
