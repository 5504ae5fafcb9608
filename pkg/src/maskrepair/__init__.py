"""Test-time repair of adversarially perturbed sentences.

Words are ranked by masked-language-model loss; high-loss words are
replaced by the first model candidate that clears a global
embedding-similarity threshold. Includes backends for masked prediction,
an embedding store with streaming similarity statistics, an evaluation
harness, and a command-line interface.
"""

__version__ = "0.1.0"

from .defense import (
    DefenseConfig,
    DefenseOutcome,
    Replacement,
    defend,
    detokenize,
    rank_importance,
)
from .embeddings import (
    EmbeddingStore,
    LoadReport,
    SimilarityStats,
    is_similar,
    load_embeddings,
    similarity_stats,
    threshold_value,
    write_cache,
)
from .evaluation import (
    CorpusRecord,
    EvalReport,
    KeywordClassifier,
    evaluate,
    read_corpus,
    sentence_similarity,
    synthetic_attack,
)
from .mlm import CorpusMlm, MaskPrediction, MlmBackend, TableMlm
from .tokenizer import TokenizedSentence, tokenize

__all__ = [
    "CorpusMlm",
    "CorpusRecord",
    "DefenseConfig",
    "DefenseOutcome",
    "EmbeddingStore",
    "EvalReport",
    "KeywordClassifier",
    "LoadReport",
    "MaskPrediction",
    "MlmBackend",
    "Replacement",
    "SimilarityStats",
    "TableMlm",
    "TokenizedSentence",
    "defend",
    "detokenize",
    "evaluate",
    "is_similar",
    "load_embeddings",
    "rank_importance",
    "read_corpus",
    "sentence_similarity",
    "similarity_stats",
    "synthetic_attack",
    "threshold_value",
    "tokenize",
    "write_cache",
]
