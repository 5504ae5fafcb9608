"""Sentence repair by masked-loss ranking and similarity-gated replacement.

The repair loop works in two phases. First every word position is masked
once against the *input* sentence and its masked-LM loss and top-k
candidates are recorded; predictions are never recomputed after a
replacement. Then positions are visited in descending loss order and, at
each, candidates are scanned in probability order; the first candidate that
clears the embedding-similarity gate replaces the word. A position is left
alone when the backend's top prediction is already the original word, when
the word is shorter than the configured minimum, or when no candidate
passes. The loop stops after ``n`` replacements or ``max_positions``
examined positions, whichever comes first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embeddings import EmbeddingStore, SimilarityStats, similarity_check
from .mlm import MaskPrediction, MlmBackend
from .tokenizer import TokenizedSentence, splice


@dataclass(frozen=True)
class DefenseConfig:
    """Repair hyperparameters.

    ``alpha`` scales the similarity cutoff (mu + alpha * sigma) and ``n``
    bounds replacements per sentence. ``max_positions`` and ``top_k`` are
    the position and candidate scan budgets. Words shorter than
    ``min_word_len`` are never replaced. ``skip_if_original_anywhere``
    widens the skip rule from "top prediction is the original word" to
    "the original word appears anywhere in the candidate list".
    """

    alpha: float = 2.0
    n: int = 3
    max_positions: int = 50
    top_k: int = 50
    min_word_len: int = 2
    skip_if_original_anywhere: bool = False

    def validate(self) -> None:
        if self.n < 0:
            raise ValueError(f"replacement budget must be >= 0, got {self.n}")
        if self.max_positions < 1:
            raise ValueError(f"max_positions must be >= 1, got {self.max_positions}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.min_word_len < 1:
            raise ValueError(f"min_word_len must be >= 1, got {self.min_word_len}")


@dataclass(frozen=True)
class CandidateCheck:
    rank: int
    word: str
    reason: str  # similarity gate reason, or "same-as-original"
    cosine: float | None = None


@dataclass(frozen=True)
class PositionAudit:
    """Why one examined position was or was not replaced."""

    importance_rank: int
    position: int
    word: str
    loss: float
    outcome: str  # "replaced" | "top-prediction-original" | "original-in-candidates"
    #             | "no-candidate-passed" | "word-too-short" | "no-candidates"
    checks: tuple[CandidateCheck, ...] = ()


@dataclass(frozen=True)
class Replacement:
    position: int
    original: str
    replacement: str
    importance_rank: int  # 1-based position in the loss ranking
    candidate_rank: int  # 0-based rank in the candidate list
    similarity: float
    loss: float


@dataclass(frozen=True)
class DefenseOutcome:
    """Repaired sentence plus the full audit trail.

    ``output`` shares the input's spans and source text; only ``words`` at
    replacement positions differ. ``predictions`` holds the up-front masked
    predictions for every position, which makes every recorded replacement
    re-checkable after the fact.
    """

    input: TokenizedSentence
    output: TokenizedSentence
    replacements: tuple[Replacement, ...]
    importance: tuple[tuple[int, float], ...]
    positions_examined: int
    predictions: dict[int, MaskPrediction] = field(repr=False)
    audits: tuple[PositionAudit, ...] = field(repr=False, default=())


def rank_importance(
    sentence: TokenizedSentence, backend: MlmBackend, top_k: int = 50
) -> list[tuple[int, float]]:
    """Rank every word position by masked loss, descending; ties by position."""
    if len(sentence) == 0:
        return []
    predictions = backend.batch_predict(sentence, range(len(sentence)), top_k=top_k)
    return sorted(
        ((p.position, p.loss) for p in predictions), key=lambda item: (-item[1], item[0])
    )


def defend(
    sentence: TokenizedSentence,
    backend: MlmBackend,
    store: EmbeddingStore,
    stats: SimilarityStats,
    config: DefenseConfig = DefenseConfig(),
) -> DefenseOutcome:
    config.validate()
    nwords = len(sentence)
    predictions = {
        p.position: p
        for p in backend.batch_predict(sentence, range(nwords), top_k=config.top_k)
    }
    importance = tuple(
        sorted(
            ((i, predictions[i].loss) for i in range(nwords)),
            key=lambda item: (-item[1], item[0]),
        )
    )

    out_words: dict[int, str] = {}
    replacements: list[Replacement] = []
    audits: list[PositionAudit] = []
    limit = min(config.max_positions, nwords)
    examined = 0
    while len(replacements) < config.n and examined < limit:
        examined += 1
        rank = examined
        position, loss = importance[rank - 1]
        word = sentence.words[position]
        prediction = predictions[position]

        if len(word) < config.min_word_len:
            audits.append(PositionAudit(rank, position, word, loss, "word-too-short"))
            continue
        if not prediction.candidates:
            audits.append(PositionAudit(rank, position, word, loss, "no-candidates"))
            continue
        if prediction.candidates[0][0] == word:
            audits.append(PositionAudit(rank, position, word, loss, "top-prediction-original"))
            continue
        if config.skip_if_original_anywhere and any(
            candidate == word for candidate, _ in prediction.candidates
        ):
            audits.append(PositionAudit(rank, position, word, loss, "original-in-candidates"))
            continue

        checks: list[CandidateCheck] = []
        accepted: Replacement | None = None
        for cand_rank, (candidate, _) in enumerate(prediction.candidates):
            if candidate == word:
                # A replacement must change the word; keep scanning.
                checks.append(CandidateCheck(cand_rank, candidate, "same-as-original"))
                continue
            gate = similarity_check(store, stats, config.alpha, word, candidate)
            checks.append(CandidateCheck(cand_rank, candidate, gate.reason, gate.cosine))
            if gate.passed:
                accepted = Replacement(
                    position=position,
                    original=word,
                    replacement=candidate,
                    importance_rank=rank,
                    candidate_rank=cand_rank,
                    similarity=gate.cosine,
                    loss=loss,
                )
                break
        if accepted is not None:
            out_words[position] = accepted.replacement
            replacements.append(accepted)
            audits.append(PositionAudit(rank, position, word, loss, "replaced", tuple(checks)))
        else:
            audits.append(
                PositionAudit(rank, position, word, loss, "no-candidate-passed", tuple(checks))
            )

    return DefenseOutcome(
        input=sentence,
        output=sentence.with_words(out_words),
        replacements=tuple(replacements),
        importance=importance,
        positions_examined=examined,
        predictions=predictions,
        audits=tuple(audits),
    )


def detokenize(outcome: DefenseOutcome) -> str:
    """Original text with replacements spliced in, original casing re-applied."""
    return splice(
        outcome.input, {r.position: r.replacement for r in outcome.replacements}
    )
