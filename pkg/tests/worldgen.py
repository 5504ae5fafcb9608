"""Synthetic review world for the desk-scale end-to-end experiment.

Builds a self-consistent universe: a sentiment grammar over noun phrases,
a transparent keyword classifier, and an embedding geometry with two
adjective clusters (one per sentiment). Each cluster holds classifier
keywords near its center and non-keyword "fringe" words further out, so
the greedy attacker (cosine floor 0.5) lands on fringe words the corpus
model has never seen, which is exactly the situation the repair loop is
built for. The build asserts its own geometric preconditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskrepair.embeddings import EmbeddingStore, SimilarityStats, similarity_stats, threshold_value
from maskrepair.evaluation import ATTACK_NEIGHBOR_FLOOR, CorpusRecord, KeywordClassifier

LABELS = ("negative", "positive")

POS_STRONG = ["excellent", "superb", "wonderful"]
POS_WEAK = ["pleasant", "tasty", "cozy"]
NEG_STRONG = ["awful", "terrible", "dreadful"]
NEG_WEAK = ["bland", "noisy", "stale"]
POS_FRINGE = ["peachy", "rosy", "sunny", "glowing"]
NEG_FRINGE = ["gloomy", "murky", "soggy", "bleak"]
NOUNS = [
    "food", "coffee", "service", "staff", "room",
    "music", "dessert", "bread", "patio", "lighting",
]
FILLERS = [
    "the", "and", "made", "bearable", "while", "offset",
    "during", "our", "long", "evening", "visit",
]

STRONG_WEIGHT = 1.5
WEAK_WEIGHT = 0.65
PRIMARY_RATE = 0.72
SECONDARY_RATE = 0.13
DIMENSION = 64
CLUSTER_DIMS = 8
WORD_DIMS = 2
PAD_WORDS = 250

# Each noun prefers a primary/secondary adjective pair (indices into the
# per-class strong+weak list). Pairs stay within one weight class, so a
# repair that lands on the other pair member leaves the evidence intact;
# the off-pair draws are where repairs can gain or lose weight. Weak-pair
# nouns are where a repair of a removed strong word falls short, which is
# the main source of irreversible attacks.
NOUN_PREFERENCE = [
    (0, 1), (1, 2), (2, 0), (0, 2), (1, 0),
    (3, 4), (4, 5), (5, 3), (3, 5), (4, 3),
]

TEMPLATE = (
    "the {a1} {n1} and the {a2} {n2} made the {b1} {n3} bearable "
    "while the {a3} {n4} offset the {b2} {n5} during our long evening visit"
)


@dataclass
class World:
    store: EmbeddingStore
    stats: SimilarityStats
    classifier: KeywordClassifier
    records: list[CorpusRecord]
    corpus_lines: list[str]


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _in_block(rng: np.random.Generator, start: int, width: int, base: np.ndarray | None, spread: float) -> np.ndarray:
    """A unit vector living entirely in one coordinate block.

    Words in disjoint blocks have exactly zero cosine, which mirrors how
    unrelated words behave in synonym-fitted embeddings; only cluster
    members (sharing a block) have meaningful similarity.
    """
    sub = _unit(rng, width)
    if base is not None:
        sub = base + spread * sub
        sub = sub / np.linalg.norm(sub)
    row = np.zeros(DIMENSION)
    row[start : start + width] = sub
    return row


def _build_store(rng: np.random.Generator) -> EmbeddingStore:
    """Block-structured vectors.

    Per sentiment: a strong-intensity and a weak-intensity subcluster that
    sit below the similarity threshold of each other, so a repair never
    swaps evidence strength on a clean word; the fringe words the attacker
    reaches live between the two subclusters and can be repaired into
    either one. Nouns and filler words get private blocks (zero cosine to
    everything), and dense pad words supply the bulk of the pair
    statistics behind mu and sigma.
    """
    words: list[str] = []
    rows: list[np.ndarray] = []
    cursor = 0
    half = CLUSTER_DIMS // 2
    for strong, weak, fringe in (
        (POS_STRONG, POS_WEAK, POS_FRINGE),
        (NEG_STRONG, NEG_WEAK, NEG_FRINGE),
    ):
        # Disjoint sub-blocks make the strong/weak cosine exactly zero;
        # fringe words span both halves and are similar to both.
        base_strong = _unit(rng, half)
        base_weak = _unit(rng, half)
        between = np.concatenate([base_strong, base_weak]) / np.sqrt(2)
        for word in strong:
            words.append(word)
            rows.append(_in_block(rng, cursor, half, base_strong, 0.25))
        for word in weak:
            words.append(word)
            rows.append(_in_block(rng, cursor + half, half, base_weak, 0.25))
        for word in fringe:
            words.append(word)
            rows.append(_in_block(rng, cursor, CLUSTER_DIMS, between, 0.4))
        cursor += CLUSTER_DIMS
    for word in NOUNS + FILLERS:
        words.append(word)
        rows.append(_in_block(rng, cursor, WORD_DIMS, None, 0.0))
        cursor += WORD_DIMS
    assert cursor <= DIMENSION
    for i in range(PAD_WORDS):
        words.append(f"pad{i:03d}")
        rows.append(_unit(rng, DIMENSION))
    return EmbeddingStore(words, np.stack(rows))


def _check_geometry(store: EmbeddingStore, stats: SimilarityStats) -> None:
    threshold = threshold_value(stats, 2.0)
    assert 0.15 < threshold < ATTACK_NEIGHBOR_FLOOR, threshold
    pos_kw = POS_STRONG + POS_WEAK
    neg_kw = NEG_STRONG + NEG_WEAK
    for a in pos_kw:
        for b in neg_kw:
            assert store.cosine(a, b) < threshold, (a, b)
    from maskrepair.evaluation import _most_distant_neighbor

    outside_vocab = set(POS_FRINGE + NEG_FRINGE) | {w for w in store.words if w.startswith("pad")}
    for strong, weak, fringe in (
        (POS_STRONG, POS_WEAK, POS_FRINGE),
        (NEG_STRONG, NEG_WEAK, NEG_FRINGE),
    ):
        for group in (strong, weak):
            for a in group:
                for b in group:
                    if a != b:
                        assert store.cosine(a, b) >= threshold, (a, b)
                # the attacker must land on a word the corpus model never saw
                neighbor = _most_distant_neighbor(store, a)
                assert neighbor in outside_vocab, (a, neighbor)
        # intensity subclusters are dissimilar: repairs never change strength
        for a in strong:
            for b in weak:
                assert store.cosine(a, b) < threshold, (a, b)
        # fringe words are repairable into either subcluster
        for f in fringe:
            for b in strong + weak:
                assert store.cosine(f, b) >= threshold, (f, b)


def _adjective(rng: np.random.Generator, label: str, noun: str) -> str:
    pool = POS_STRONG + POS_WEAK if label == "positive" else NEG_STRONG + NEG_WEAK
    primary, secondary = NOUN_PREFERENCE[NOUNS.index(noun)]
    roll = rng.random()
    if roll < PRIMARY_RATE:
        return pool[primary]
    if roll < PRIMARY_RATE + SECONDARY_RATE:
        return pool[secondary]
    return pool[int(rng.integers(0, len(pool)))]


def _sentence(rng: np.random.Generator, label: str) -> str:
    other = "negative" if label == "positive" else "positive"
    nouns = [NOUNS[int(i)] for i in rng.choice(len(NOUNS), size=5, replace=False)]
    return TEMPLATE.format(
        a1=_adjective(rng, label, nouns[0]),
        n1=nouns[0],
        a2=_adjective(rng, label, nouns[1]),
        n2=nouns[1],
        b1=_adjective(rng, other, nouns[2]),
        n3=nouns[2],
        a3=_adjective(rng, label, nouns[3]),
        n4=nouns[3],
        b2=_adjective(rng, other, nouns[4]),
        n5=nouns[4],
    )


def _classifier() -> KeywordClassifier:
    weights: dict[str, dict[str, float]] = {}
    for word in POS_STRONG:
        weights[word] = {"positive": STRONG_WEIGHT}
    for word in POS_WEAK:
        weights[word] = {"positive": WEAK_WEIGHT}
    for word in NEG_STRONG:
        weights[word] = {"negative": STRONG_WEIGHT}
    for word in NEG_WEAK:
        weights[word] = {"negative": WEAK_WEIGHT}
    return KeywordClassifier(LABELS, weights)


def build_world(seed: int, size: int = 200) -> World:
    rng = np.random.default_rng(seed)
    store = _build_store(rng)
    stats = similarity_stats(store, mode="exact")
    _check_geometry(store, stats)
    records = []
    lines = []
    for i in range(size):
        label = LABELS[int(rng.integers(0, 2))]
        text = _sentence(rng, label)
        records.append(
            CorpusRecord(id=f"c{i:03d}", original_text=text, gold_label=label, kind="clean")
        )
        lines.append(text)
    return World(
        store=store,
        stats=stats,
        classifier=_classifier(),
        records=records,
        corpus_lines=lines,
    )
