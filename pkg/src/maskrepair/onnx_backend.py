"""Adapter for externally exported transformer models.

The file contract: an ONNX graph with named inputs ``input_ids`` and
``attention_mask`` (int64, shape [1, seq]) and, for masked-LM graphs, a
named output ``logits`` (float32, [1, seq, vocab]). A sidecar text file
lists the tokenizer vocabulary one token per line (index = line number),
and a JSON manifest records the file paths, their SHA-256 digests, the mask
token id, and the sequence cap.

Masking is word-granular even though the tokenizer may be subword: all
pieces of the target word are replaced by a single mask token, the word's
loss is the mean of its pieces' losses under that one masked distribution,
and candidates are restricted to vocabulary entries that detokenize to one
whole word.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mlm import MaskPrediction, MlmBackend, OOV_FLOOR, _ranked
from .onnx_graph import FLOAT, GraphError, GraphRunner, INT64, load_model
from .tokenizer import TokenizedSentence, _WORD_RE

MANIFEST_VERSION = 1

_SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


class ManifestError(ValueError):
    """Manifest is missing files, has stale digests, or is inconsistent."""


@dataclass(frozen=True)
class ModelManifest:
    kind: str  # "mlm" | "classifier" | "encoder"
    graph_path: Path
    vocab_path: Path
    seq_cap: int
    format_version: int
    mask_token_id: int | None = None
    labels: tuple[str, ...] | None = None


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def load_manifest(path: str | Path, verify_digests: bool = True) -> ModelManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    kind = raw.get("kind")
    if kind not in ("mlm", "classifier", "encoder"):
        raise ManifestError(f"{path}: unknown model kind {kind!r}")
    version = int(raw.get("format_version", 0))
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {version}")
    base = path.parent
    graph_path = base / raw["graph"]
    vocab_path = base / raw["vocabulary"]
    for rel, resolved in ((raw["graph"], graph_path), (raw["vocabulary"], vocab_path)):
        if not resolved.is_file():
            raise ManifestError(f"{path}: referenced file {rel!r} does not exist")
    if verify_digests:
        digests = raw.get("digests", {})
        for rel, resolved in ((raw["graph"], graph_path), (raw["vocabulary"], vocab_path)):
            recorded = digests.get(rel)
            if recorded is None:
                raise ManifestError(f"{path}: no digest recorded for {rel!r}")
            actual = file_digest(resolved)
            if actual != recorded:
                raise ManifestError(
                    f"{path}: digest mismatch for {rel!r} "
                    f"(recorded {recorded[:12]}..., actual {actual[:12]}...)"
                )
    vocab_size = sum(1 for _ in open(vocab_path, "r", encoding="utf-8"))
    mask_id = raw.get("mask_token_id")
    if kind == "mlm":
        if mask_id is None:
            raise ManifestError(f"{path}: mlm manifest requires mask_token_id")
        if not 0 <= int(mask_id) < vocab_size:
            raise ManifestError(
                f"{path}: mask_token_id {mask_id} outside vocabulary of {vocab_size}"
            )
    labels = raw.get("labels")
    if kind == "classifier" and not labels:
        raise ManifestError(f"{path}: classifier manifest requires labels")
    return ModelManifest(
        kind=kind,
        graph_path=graph_path,
        vocab_path=vocab_path,
        seq_cap=int(raw.get("seq_cap", 512)),
        format_version=version,
        mask_token_id=None if mask_id is None else int(mask_id),
        labels=tuple(labels) if labels else None,
    )


def _read_vocab(path: Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle]


class WordPieceTokenizer:
    """Greedy longest-match subword segmentation over a fixed vocabulary.

    Continuation pieces carry the ``##`` prefix. Words that cannot be
    segmented map to the unknown token.
    """

    def __init__(self, tokens: list[str], unk_token: str = "[UNK]"):
        self.tokens = tokens
        self.index = {token: i for i, token in enumerate(tokens)}
        if unk_token not in self.index:
            raise ManifestError(f"vocabulary lacks the unknown token {unk_token!r}")
        self.unk_id = self.index[unk_token]

    def token_id(self, token: str) -> int | None:
        return self.index.get(token)

    def pieces(self, word: str) -> list[int]:
        if word in self.index:
            return [self.index[word]]
        ids: list[int] = []
        start = 0
        while start < len(word):
            end = len(word)
            piece_id = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = "##" + piece
                piece_id = self.index.get(piece)
                if piece_id is not None:
                    break
                end -= 1
            if piece_id is None:
                return [self.unk_id]
            ids.append(piece_id)
            start = end
        return ids


def _validate_graph(runner: GraphRunner, graph_file: Path, output: str, output_rank: int) -> None:
    graph = runner.graph
    for name in ("input_ids", "attention_mask"):
        info = graph.input_info(name)
        if info is None or name not in runner.input_names():
            raise GraphError(f"{graph_file}: graph lacks required input {name!r}")
        if info.elem_type != INT64:
            raise GraphError(f"{graph_file}: input {name!r} must be int64")
    extra = [name for name in runner.input_names() if name not in ("input_ids", "attention_mask")]
    if extra:
        raise GraphError(f"{graph_file}: unexpected graph input {extra[0]!r}")
    for info in graph.outputs:
        if info.name == output:
            if info.elem_type != FLOAT:
                raise GraphError(f"{graph_file}: output {output!r} must be float32")
            if info.dims and len(info.dims) != output_rank:
                raise GraphError(
                    f"{graph_file}: output {output!r} must have rank {output_rank}"
                )
            return
    raise GraphError(f"{graph_file}: graph lacks required output {output!r}")


class OnnxMlm(MlmBackend):
    """Masked-LM backend running an exported graph file.

    Not thread safe: clone one instance per worker. Long sentences are
    scored inside a window of at most ``seq_cap`` pieces centered on the
    masked word.
    """

    thread_safe = False

    def __init__(self, manifest: str | Path | ModelManifest, oov_floor: float = OOV_FLOOR):
        if not isinstance(manifest, ModelManifest):
            manifest = load_manifest(manifest)
        if manifest.kind != "mlm":
            raise ManifestError(f"expected an mlm manifest, got kind {manifest.kind!r}")
        self.manifest = manifest
        self.oov_floor = oov_floor
        self._runner = GraphRunner(load_model(manifest.graph_path))
        _validate_graph(self._runner, manifest.graph_path, "logits", 3)
        tokens = _read_vocab(manifest.vocab_path)
        self._tokenizer = WordPieceTokenizer(tokens)
        self._mask_id = manifest.mask_token_id
        self._cls_id = self._tokenizer.token_id("[CLS]")
        self._sep_id = self._tokenizer.token_id("[SEP]")
        # Candidate set: single pieces that detokenize to one whole word.
        special = set(_SPECIAL_TOKENS)
        self._candidate_ids = [
            i
            for i, token in enumerate(tokens)
            if token not in special
            and not token.startswith("##")
            and _WORD_RE.fullmatch(token)
        ]

    def vocabulary(self) -> tuple[str, ...]:
        return tuple(self._tokenizer.tokens[i] for i in self._candidate_ids)

    def _window(self, pieces: list[list[int]], position: int) -> tuple[int, int]:
        """Word range [lo, hi) around ``position`` fitting the piece budget."""
        budget = self.manifest.seq_cap
        if self._cls_id is not None:
            budget -= 1
        if self._sep_id is not None:
            budget -= 1
        budget -= 1  # the mask piece standing in for the target word
        lo = hi = position
        used = 0
        while True:
            extended = False
            if lo > 0 and used + len(pieces[lo - 1]) <= budget:
                lo -= 1
                used += len(pieces[lo])
                extended = True
            if hi + 1 < len(pieces) and used + len(pieces[hi + 1]) <= budget:
                hi += 1
                used += len(pieces[hi])
                extended = True
            if not extended:
                return lo, hi + 1

    def _masked_distribution(self, sentence: TokenizedSentence, position: int) -> np.ndarray:
        pieces = [self._tokenizer.pieces(word) for word in sentence.words]
        lo, hi = self._window(pieces, position)
        ids: list[int] = []
        if self._cls_id is not None:
            ids.append(self._cls_id)
        mask_index = None
        for word_index in range(lo, hi):
            if word_index == position:
                mask_index = len(ids)
                ids.append(self._mask_id)
            else:
                ids.extend(pieces[word_index])
        if self._sep_id is not None:
            ids.append(self._sep_id)
        feeds = {
            "input_ids": np.array([ids], dtype=np.int64),
            "attention_mask": np.ones((1, len(ids)), dtype=np.int64),
        }
        logits = self._runner.run(feeds)["logits"][0, mask_index, :].astype(np.float64)
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        return exp / exp.sum()

    def predict_masked(
        self, sentence: TokenizedSentence, position: int, top_k: int = 50
    ) -> MaskPrediction:
        self._check_query(sentence, position, top_k)
        probabilities = self._masked_distribution(sentence, position)
        true_pieces = self._tokenizer.pieces(sentence.words[position])
        if self._tokenizer.unk_id in true_pieces:
            loss = -math.log(self.oov_floor)
        else:
            loss = float(np.mean([-math.log(probabilities[i]) for i in true_pieces]))
        scores = {
            self._tokenizer.tokens[i].casefold(): float(probabilities[i])
            for i in self._candidate_ids
        }
        return MaskPrediction(position, loss, _ranked(scores, top_k))


class OnnxTextClassifier:
    """Classifier backed by an exported graph with output ``logits`` [1, labels].

    Label names come from the manifest (index-aligned with the logits).
    Ties resolve to the earliest label, matching the in-process classifier.
    """

    def __init__(self, manifest: str | Path | ModelManifest):
        if not isinstance(manifest, ModelManifest):
            manifest = load_manifest(manifest)
        if manifest.kind != "classifier":
            raise ManifestError(
                f"expected a classifier manifest, got kind {manifest.kind!r}"
            )
        self.manifest = manifest
        self.labels: tuple[str, ...] = manifest.labels
        self._runner = GraphRunner(load_model(manifest.graph_path))
        _validate_graph(self._runner, manifest.graph_path, "logits", 2)
        self._tokenizer = WordPieceTokenizer(_read_vocab(manifest.vocab_path))
        self._cls_id = self._tokenizer.token_id("[CLS]")
        self._sep_id = self._tokenizer.token_id("[SEP]")

    def predict(self, text: str) -> tuple[str, dict[str, float]]:
        from .tokenizer import tokenize

        ids: list[int] = []
        if self._cls_id is not None:
            ids.append(self._cls_id)
        for word in tokenize(text).words:
            ids.extend(self._tokenizer.pieces(word))
        if self._sep_id is not None:
            ids.append(self._sep_id)
        ids = ids[: self.manifest.seq_cap]
        feeds = {
            "input_ids": np.array([ids], dtype=np.int64),
            "attention_mask": np.ones((1, len(ids)), dtype=np.int64),
        }
        logits = self._runner.run(feeds)["logits"][0].astype(np.float64)
        if logits.shape[0] != len(self.labels):
            raise GraphError(
                f"{self.manifest.graph_path}: logits width {logits.shape[0]} "
                f"does not match {len(self.labels)} labels"
            )
        shifted = np.exp(logits - logits.max())
        probabilities = shifted / shifted.sum()
        best = max(range(len(self.labels)), key=lambda i: (probabilities[i], -i))
        return self.labels[best], {
            label: float(p) for label, p in zip(self.labels, probabilities)
        }


class OnnxSentenceEncoder:
    """Sentence encoder backed by an exported graph with output ``embedding``."""

    def __init__(self, manifest: str | Path | ModelManifest):
        if not isinstance(manifest, ModelManifest):
            manifest = load_manifest(manifest)
        if manifest.kind != "encoder":
            raise ManifestError(f"expected an encoder manifest, got kind {manifest.kind!r}")
        self.manifest = manifest
        self._runner = GraphRunner(load_model(manifest.graph_path))
        _validate_graph(self._runner, manifest.graph_path, "embedding", 2)
        self._tokenizer = WordPieceTokenizer(_read_vocab(manifest.vocab_path))
        self._cls_id = self._tokenizer.token_id("[CLS]")
        self._sep_id = self._tokenizer.token_id("[SEP]")

    def encode(self, sentence: TokenizedSentence) -> np.ndarray:
        ids: list[int] = []
        if self._cls_id is not None:
            ids.append(self._cls_id)
        for word in sentence.words:
            ids.extend(self._tokenizer.pieces(word))
        if self._sep_id is not None:
            ids.append(self._sep_id)
        ids = ids[: self.manifest.seq_cap]
        feeds = {
            "input_ids": np.array([ids], dtype=np.int64),
            "attention_mask": np.ones((1, len(ids)), dtype=np.int64),
        }
        return self._runner.run(feeds)["embedding"][0].astype(np.float64)

    def similarity(self, a: TokenizedSentence, b: TokenizedSentence) -> float:
        left = self.encode(a)
        right = self.encode(b)
        denom = float(np.linalg.norm(left) * np.linalg.norm(right))
        if denom == 0.0:
            return 0.0
        return float(np.dot(left, right) / denom)
