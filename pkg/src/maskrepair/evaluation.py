"""Evaluation harness: attack reversal, clean retention, similarity, loss split.

The protocol mirrors how test-time repair is scored. Clean records count
toward retention only when the classifier gets the original right; attacked
records count toward reversal only when the classifier gets the original
right *and* the adversarial text wrong. The repair runs only on those
eligible records. For every eligible attacked record the classifier's
cross-entropy on the adversarial text is recorded and later split by
whether the repair restored the gold label.

Also here: a transparent bag-of-words classifier (hand-auditable by design)
and a greedy synthetic attacker, so the full loop runs at desk scale
without external model checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .defense import DefenseOutcome, detokenize
from .embeddings import EmbeddingStore
from .tokenizer import splice, tokenize

ATTACK_NEIGHBOR_FLOOR = 0.5


class Classifier(Protocol):
    """Text classifier contract: deterministic label + per-class probabilities."""

    labels: tuple[str, ...]

    def predict(self, text: str) -> tuple[str, dict[str, float]]: ...


class KeywordClassifier:
    """Bag-of-words scorer over a fixed keyword -> class weight table.

    Scores are summed per label over the case-folded tokens and passed
    through a softmax. Ties resolve to the earliest label in ``labels``,
    which keeps the classifier fully deterministic and hand-auditable.
    """

    def __init__(self, labels: Iterable[str], weights: dict[str, dict[str, float]]):
        self.labels = tuple(labels)
        if len(self.labels) < 2:
            raise ValueError("classifier needs at least two labels")
        self.weights = {
            word.casefold(): {label: float(w) for label, w in table.items()}
            for word, table in weights.items()
        }
        for word, table in self.weights.items():
            unknown = set(table) - set(self.labels)
            if unknown:
                raise ValueError(f"keyword {word!r} scores unknown labels {sorted(unknown)}")

    @classmethod
    def from_json(cls, path: str | Path) -> "KeywordClassifier":
        with open(path, "r", encoding="utf-8") as handle:
            spec = json.load(handle)
        return cls(spec["labels"], spec["weights"])

    def to_json(self, path: str | Path) -> None:
        payload = {"labels": list(self.labels), "weights": self.weights}
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")

    def predict(self, text: str) -> tuple[str, dict[str, float]]:
        scores = {label: 0.0 for label in self.labels}
        for word in tokenize(text).words:
            for label, weight in self.weights.get(word, {}).items():
                scores[label] += weight
        values = np.array([scores[label] for label in self.labels], dtype=np.float64)
        values -= values.max()
        exp = np.exp(values)
        probabilities = exp / exp.sum()
        best = max(range(len(self.labels)), key=lambda i: (probabilities[i], -i))
        return self.labels[best], {
            label: float(p) for label, p in zip(self.labels, probabilities)
        }


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    original_text: str
    gold_label: str
    kind: str  # "clean" | "attacked"
    adversarial_text: str | None = None


def read_corpus(source: str | Path | Iterable[str]) -> list[CorpusRecord]:
    """Read line-delimited JSON records with unique ids."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            return read_corpus([line for line in handle])
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as err:
            raise ValueError(f"corpus line {lineno}: invalid JSON ({err.msg})") from None
        kind = raw.get("kind", "clean")
        if kind not in ("clean", "attacked"):
            raise ValueError(f"corpus line {lineno}: unknown kind {kind!r}")
        record = CorpusRecord(
            id=str(raw["id"]),
            original_text=raw["original"],
            gold_label=str(raw["label"]),
            kind=kind,
            adversarial_text=raw.get("adversarial"),
        )
        if record.id in seen:
            raise ValueError(f"corpus line {lineno}: duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


def corpus_line(record: CorpusRecord) -> str:
    payload: dict[str, object] = {
        "id": record.id,
        "original": record.original_text,
        "label": record.gold_label,
        "kind": record.kind,
    }
    if record.adversarial_text is not None:
        payload["adversarial"] = record.adversarial_text
    return json.dumps(payload, sort_keys=True)


def sentence_similarity(a: str, b: str, store: EmbeddingStore) -> float | None:
    """Cosine of the mean in-vocabulary word vectors of the two texts.

    Returns None when either text has no in-vocabulary words, in which case
    the similarity is undefined and reported as absent.
    """
    means = []
    for text in (a, b):
        rows = [store.vector(w) for w in tokenize(text).words if w in store]
        if not rows:
            return None
        means.append(np.mean(rows, axis=0))
    left, right = means
    denom = float(np.linalg.norm(left) * np.linalg.norm(right))
    if denom == 0.0:
        return None
    return float(np.dot(left, right) / denom)


def synthetic_attack(
    record: CorpusRecord,
    classifier: Classifier,
    store: EmbeddingStore,
    budget: int,
) -> str | None:
    """Greedy word-swap attack used to produce adversarial fixtures.

    Each step ranks words by the drop in gold-class probability when the
    word is deleted, then swaps the highest-impact word for its most
    distant embedding neighbor with cosine still above
    ``ATTACK_NEIGHBOR_FLOOR``. Stops at the first label flip; returns None
    if the label never flips within the budget. Fully deterministic:
    ties go to the earliest position and the lexicographically smallest
    neighbor.
    """
    if budget < 1:
        raise ValueError(f"attack budget must be >= 1, got {budget}")
    label, _ = classifier.predict(record.original_text)
    if label != record.gold_label:
        raise ValueError(
            f"record {record.id!r}: classifier must be correct on the original text"
        )
    gold = record.gold_label
    sentence = tokenize(record.original_text)
    swaps: dict[int, str] = {}
    blocked: set[int] = set()
    for _ in range(budget):
        base = classifier.predict(splice(sentence, swaps))[1][gold]
        drops: list[tuple[float, int]] = []
        for position in range(len(sentence)):
            if position in swaps or position in blocked:
                continue
            if sentence.words[position] not in store:
                continue
            probe = splice(sentence, {**swaps, position: ""})
            drops.append((base - classifier.predict(probe)[1][gold], position))
        chosen = None
        for drop, position in sorted(drops, key=lambda item: (-item[0], item[1])):
            neighbor = _most_distant_neighbor(store, sentence.words[position])
            if neighbor is None:
                blocked.add(position)
                continue
            chosen = (position, neighbor)
            break
        if chosen is None:
            return None  # nothing left to perturb
        position, neighbor = chosen
        swaps[position] = neighbor
        attacked_text = splice(sentence, swaps)
        if classifier.predict(attacked_text)[0] != gold:
            return attacked_text
    return None


def _most_distant_neighbor(store: EmbeddingStore, word: str) -> str | None:
    """Lowest-cosine vocabulary word still at or above the attack floor."""
    index = store.index(word)
    sims = store.vectors @ store.vectors[index]
    sims[index] = -2.0  # exclude the word itself
    eligible = np.where(sims >= ATTACK_NEIGHBOR_FLOOR)[0]
    if eligible.size == 0:
        return None
    best = min(eligible, key=lambda i: (sims[i], store.words[i]))
    return store.words[best]


@dataclass(frozen=True)
class RecordResult:
    """Per-record evaluation log entry."""

    id: str
    kind: str
    gold: str
    eligible: bool
    pred_clean: str
    pred_adv: str | None = None
    pred_def: str | None = None
    replacements: int | None = None
    similarity: float | None = None
    similarity_to_original: float | None = None
    adv_loss: float | None = None

    def to_json(self) -> str:
        payload = {
            "id": self.id,
            "kind": self.kind,
            "gold": self.gold,
            "eligible": self.eligible,
            "pred_clean": self.pred_clean,
            "pred_adv": self.pred_adv,
            "pred_def": self.pred_def,
            "replacements": self.replacements,
            "similarity": _round(self.similarity),
            "similarity_to_original": _round(self.similarity_to_original),
            "adv_loss": _round(self.adv_loss),
        }
        return json.dumps(payload, sort_keys=True)


def _round(value: float | None) -> float | None:
    return None if value is None else round(value, 9)


@dataclass
class EvalReport:
    """Aggregate cells plus the per-record log that re-derives them."""

    clean_total: int = 0
    clean_retained: int = 0
    clean_mean_similarity: float | None = None
    attacked_eligible: int = 0
    reversed_count: int = 0
    mean_similarity: float | None = None
    loss_success_mean: float | None = None
    loss_success_count: int = 0
    loss_failure_mean: float | None = None
    loss_failure_count: int = 0
    skipped_records: int = 0
    records: list[RecordResult] = field(default_factory=list)

    @property
    def clean_retention(self) -> float | None:
        if self.clean_total == 0:
            return None
        return self.clean_retained / self.clean_total

    @property
    def reversal_rate(self) -> float | None:
        if self.attacked_eligible == 0:
            return None
        return self.reversed_count / self.attacked_eligible


def evaluate(
    corpus: list[CorpusRecord],
    defense: Callable[[str], DefenseOutcome],
    classifier: Classifier,
    store: EmbeddingStore,
    similarity_fn: Callable[[str, str], float | None] | None = None,
) -> EvalReport:
    """Run the full measurement protocol over a corpus.

    ``defense`` maps raw text to a DefenseOutcome; the repaired text is its
    detokenized output. Records are processed in input order and every
    aggregate is a sum or mean, so the report is deterministic.

    ``similarity_fn`` swaps in another sentence encoder (for example an
    exported graph); the default is mean-of-word-vectors cosine over the
    store.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    if similarity_fn is None:
        def similarity_fn(a: str, b: str) -> float | None:
            return sentence_similarity(a, b, store)
    report = EvalReport()
    clean_similarities: list[float] = []
    attacked_similarities: list[float] = []
    success_losses: list[float] = []
    failure_losses: list[float] = []

    for record in corpus:
        pred_clean, _ = classifier.predict(record.original_text)
        if record.kind == "clean":
            if pred_clean != record.gold_label:
                report.records.append(
                    RecordResult(record.id, record.kind, record.gold_label, False, pred_clean)
                )
                continue
            outcome = defense(record.original_text)
            defended = detokenize(outcome)
            pred_def, _ = classifier.predict(defended)
            similarity = similarity_fn(defended, record.original_text)
            report.clean_total += 1
            if pred_def == record.gold_label:
                report.clean_retained += 1
            if similarity is not None:
                clean_similarities.append(similarity)
            report.records.append(
                RecordResult(
                    record.id,
                    record.kind,
                    record.gold_label,
                    True,
                    pred_clean,
                    pred_def=pred_def,
                    replacements=len(outcome.replacements),
                    similarity=similarity,
                    similarity_to_original=similarity,
                )
            )
            continue

        if record.adversarial_text is None:
            report.skipped_records += 1
            report.records.append(
                RecordResult(record.id, record.kind, record.gold_label, False, pred_clean)
            )
            continue
        pred_adv, adv_probs = classifier.predict(record.adversarial_text)
        adv_loss = -math.log(max(adv_probs.get(record.gold_label, 0.0), 1e-300))
        eligible = pred_clean == record.gold_label and pred_adv != record.gold_label
        if not eligible:
            report.records.append(
                RecordResult(
                    record.id,
                    record.kind,
                    record.gold_label,
                    False,
                    pred_clean,
                    pred_adv=pred_adv,
                    adv_loss=adv_loss,
                )
            )
            continue
        outcome = defense(record.adversarial_text)
        defended = detokenize(outcome)
        pred_def, _ = classifier.predict(defended)
        similarity = similarity_fn(defended, record.adversarial_text)
        similarity_orig = similarity_fn(defended, record.original_text)
        report.attacked_eligible += 1
        restored = pred_def == record.gold_label
        if restored:
            report.reversed_count += 1
            success_losses.append(adv_loss)
        else:
            failure_losses.append(adv_loss)
        if similarity is not None:
            attacked_similarities.append(similarity)
        report.records.append(
            RecordResult(
                record.id,
                record.kind,
                record.gold_label,
                True,
                pred_clean,
                pred_adv=pred_adv,
                pred_def=pred_def,
                replacements=len(outcome.replacements),
                similarity=similarity,
                similarity_to_original=similarity_orig,
                adv_loss=adv_loss,
            )
        )

    if clean_similarities:
        report.clean_mean_similarity = float(np.mean(clean_similarities))
    if attacked_similarities:
        report.mean_similarity = float(np.mean(attacked_similarities))
    if success_losses:
        report.loss_success_mean = float(np.mean(success_losses))
        report.loss_success_count = len(success_losses)
    if failure_losses:
        report.loss_failure_mean = float(np.mean(failure_losses))
        report.loss_failure_count = len(failure_losses)
    return report


def format_report(report: EvalReport, style: str = "kv") -> str:
    """Render the aggregate cells, key-value or human table."""
    cells = [
        ("clean_total", report.clean_total),
        ("clean_retained", report.clean_retained),
        ("clean_retention", report.clean_retention),
        ("clean_mean_similarity", report.clean_mean_similarity),
        ("attacked_eligible", report.attacked_eligible),
        ("reversed", report.reversed_count),
        ("reversal_rate", report.reversal_rate),
        ("mean_similarity", report.mean_similarity),
        ("loss_success_mean", report.loss_success_mean),
        ("loss_success_count", report.loss_success_count),
        ("loss_failure_mean", report.loss_failure_mean),
        ("loss_failure_count", report.loss_failure_count),
        ("skipped_records", report.skipped_records),
    ]
    if style == "kv":
        return "\n".join(f"{key} {_fmt(value)}" for key, value in cells)
    if style == "table":
        width = max(len(key) for key, _ in cells)
        return "\n".join(f"{key.ljust(width)}  {_fmt(value)}" for key, value in cells)
    raise ValueError(f"unknown report style: {style!r}")


def _fmt(value: object) -> str:
    if value is None:
        return "absent"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
