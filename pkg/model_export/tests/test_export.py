from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
import torch

from model_export.export import ExportError, build_mlm_graph, export_mlm
from model_export.tiny_mlm import MASK, TinyMaskedLm, build_vocab, corpus_words, train_mlm

from maskrepair.onnx_backend import ManifestError, OnnxMlm, OnnxSentenceEncoder, load_manifest
from maskrepair.onnx_graph import GraphError, GraphRunner, load_model
from maskrepair.tokenizer import tokenize

CORPUS = Path(__file__).parent / "data" / "train_corpus.txt"
PANGRAM = "the quick brown fox jumps over the lazy dog"


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("export")
    manifest = export_mlm(CORPUS, out_dir, seed=0, steps=300, with_encoder=True)
    return out_dir, manifest


class TestExportedMlm:
    def test_adapter_self_test_masked_common_word(self, exported):
        # a masked common word of a pangram sentence must rank in the top 10
        _, manifest = exported
        backend = OnnxMlm(manifest)
        sentence = tokenize(PANGRAM)
        prediction = backend.predict_masked(sentence, 0, top_k=10)
        assert "the" in [word for word, _ in prediction.candidates]

    def test_manifest_digests_validate(self, exported):
        _, manifest = exported
        loaded = load_manifest(manifest, verify_digests=True)
        assert loaded.kind == "mlm"
        assert loaded.mask_token_id is not None

    def test_tampered_graph_fails_digest_validation(self, exported, tmp_path):
        out_dir, manifest = exported
        copy_dir = tmp_path / "tampered"
        copy_dir.mkdir()
        for name in ("mlm.onnx", "vocab.txt", "mlm.manifest.json"):
            (copy_dir / name).write_bytes((out_dir / name).read_bytes())
        blob = bytearray((copy_dir / "mlm.onnx").read_bytes())
        blob[-1] ^= 0xFF
        (copy_dir / "mlm.onnx").write_bytes(bytes(blob))
        with pytest.raises(ManifestError, match="digest mismatch"):
            load_manifest(copy_dir / "mlm.manifest.json")

    def test_graph_logits_match_torch(self, exported):
        out_dir, _ = exported
        vocab = (out_dir / "vocab.txt").read_text(encoding="utf-8").splitlines()
        model = TinyMaskedLm(len(vocab))
        model.load_state_dict(torch.load(out_dir / "mlm.pt", weights_only=True))
        model.eval()
        index = {token: i for i, token in enumerate(vocab)}
        words = corpus_words(PANGRAM)
        ids = [index["[CLS]"]] + [index[w] for w in words] + [index["[SEP]"]]
        ids[2] = index[MASK]
        feeds = {
            "input_ids": np.array([ids], dtype=np.int64),
            "attention_mask": np.ones((1, len(ids)), dtype=np.int64),
        }
        runner = GraphRunner(load_model(out_dir / "mlm.onnx"))
        graph_logits = runner.run(feeds)["logits"]
        with torch.no_grad():
            torch_logits = model(
                torch.tensor(feeds["input_ids"]), torch.tensor(feeds["attention_mask"])
            ).numpy()
        np.testing.assert_allclose(graph_logits, torch_logits, atol=1e-4)

    def test_adapter_prediction_is_deterministic(self, exported):
        _, manifest = exported
        backend = OnnxMlm(manifest)
        sentence = tokenize("the lazy dog sleeps under the old tree")
        assert backend.predict_masked(sentence, 2) == backend.predict_masked(sentence, 2)

    def test_export_is_reproducible(self, exported, tmp_path):
        out_dir, _ = exported
        again = tmp_path / "again"
        export_mlm(CORPUS, again, seed=0, steps=300)
        assert (again / "mlm.onnx").read_bytes() == (out_dir / "mlm.onnx").read_bytes()
        assert (again / "vocab.txt").read_bytes() == (out_dir / "vocab.txt").read_bytes()

    def test_wrong_output_name_fails_adapter_validation(self, exported, tmp_path):
        out_dir, _ = exported
        lines = [l.rstrip("\n") for l in open(CORPUS, encoding="utf-8") if l.strip()]
        vocab = build_vocab(lines)
        model = train_mlm(lines, vocab, seed=0, steps=1)
        graph = build_mlm_graph(model, len(vocab))
        # rename the output tensor everywhere (same byte length keeps offsets)
        doctored = graph.replace(b"logits", b"logitz")
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        (bad_dir / "mlm.onnx").write_bytes(doctored)
        (bad_dir / "vocab.txt").write_bytes((out_dir / "vocab.txt").read_bytes())
        manifest = json.loads((out_dir / "mlm.manifest.json").read_text(encoding="utf-8"))
        from maskrepair.onnx_backend import ModelManifest

        with pytest.raises(GraphError, match="logits"):
            OnnxMlm(
                ModelManifest(
                    kind="mlm",
                    graph_path=bad_dir / "mlm.onnx",
                    vocab_path=bad_dir / "vocab.txt",
                    seq_cap=manifest["seq_cap"],
                    format_version=manifest["format_version"],
                    mask_token_id=manifest["mask_token_id"],
                )
            )

    def test_validate_structure_tripwire(self):
        from model_export.export import _validate_structure

        with pytest.raises(ExportError, match="input_ids"):
            _validate_structure(b"not a graph", "logits")


class TestExportedEncoder:
    def test_encoder_loads_and_encodes(self, exported):
        out_dir, _ = exported
        encoder = OnnxSentenceEncoder(out_dir / "encoder.manifest.json")
        vector = encoder.encode(tokenize(PANGRAM))
        assert vector.shape == (48,)
        assert np.all(np.isfinite(vector))

    def test_self_similarity(self, exported):
        out_dir, _ = exported
        encoder = OnnxSentenceEncoder(out_dir / "encoder.manifest.json")
        a = tokenize(PANGRAM)
        assert encoder.similarity(a, a) == pytest.approx(1.0, abs=1e-6)

    def test_related_sentences_more_similar_than_unrelated(self, exported):
        out_dir, _ = exported
        encoder = OnnxSentenceEncoder(out_dir / "encoder.manifest.json")
        base = tokenize(PANGRAM)
        related = tokenize("a quick brown fox jumps over a lazy dog")
        unrelated = tokenize("the farmer locks the barn every night")
        assert encoder.similarity(base, related) > encoder.similarity(base, unrelated)
