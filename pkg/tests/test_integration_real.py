"""Optional integration tier against real exported artifacts.

Set MASKREPAIR_REAL_ARTIFACTS to a directory containing:

  embeddings.txt           counter-fitted-style word vectors
  mlm.manifest.json        exported masked-LM graph manifest (+ files)
  classifier.manifest.json exported classifier graph manifest (+ files)
  attacked_corpus.jsonl    pre-generated adversarial corpus (~100 records)

Skipped entirely when the variable or any file is absent; the in-repo
suites do not depend on these artifacts.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from maskrepair.defense import DefenseConfig, defend
from maskrepair.embeddings import load_embeddings, similarity_stats
from maskrepair.evaluation import evaluate, read_corpus
from maskrepair.tokenizer import tokenize

ARTIFACTS = os.environ.get("MASKREPAIR_REAL_ARTIFACTS")

REQUIRED = (
    "embeddings.txt",
    "mlm.manifest.json",
    "classifier.manifest.json",
    "attacked_corpus.jsonl",
)


def _artifacts_ready() -> bool:
    if not ARTIFACTS:
        return False
    base = Path(ARTIFACTS)
    return all((base / name).is_file() for name in REQUIRED)


@pytest.mark.skipif(not _artifacts_ready(), reason="real model artifacts not supplied")
def test_i1_reversal_rate_on_real_attacks():
    from maskrepair.onnx_backend import OnnxMlm, OnnxTextClassifier

    base = Path(ARTIFACTS)
    store, _ = load_embeddings(base / "embeddings.txt", format="text")
    stats = similarity_stats(store, mode="sampled", pair_count=10_000_000, seed=42)
    backend = OnnxMlm(base / "mlm.manifest.json")
    classifier = OnnxTextClassifier(base / "classifier.manifest.json")
    corpus = read_corpus(base / "attacked_corpus.jsonl")
    config = DefenseConfig(alpha=2.0, n=3)

    def run_defense(text):
        return defend(tokenize(text), backend, store, stats, config)

    report = evaluate(corpus, run_defense, classifier, store)
    assert report.attacked_eligible >= 50, "corpus too small to judge"
    # full-scale reference reversal rate for this attack family: 0.790
    assert 0.790 - 0.15 <= report.reversal_rate <= 0.790 + 0.15
