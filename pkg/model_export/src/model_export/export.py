"""Export a trained masked LM (and optionally a sentence encoder) to files.

Produces the full artifact set the repair toolkit consumes: an ONNX graph
with named inputs ``input_ids``/``attention_mask`` and output ``logits``
(float32, [1, seq, vocab]), a vocabulary sidecar (one token per line,
index = line number), and a JSON manifest recording the files, their
SHA-256 digests, the mask token id, and the sequence cap. The optional
encoder graph shares the transformer trunk and emits a masked-mean-pooled
``embedding`` (float32, [1, dim]).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import torch

from . import onnx_writer as ow
from .tiny_mlm import MASK, TinyMaskedLm, build_vocab, train_mlm

MANIFEST_VERSION = 1


class ExportError(RuntimeError):
    pass


def _numpy_weights(model: TinyMaskedLm) -> dict[str, np.ndarray]:
    state = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    weights: dict[str, np.ndarray] = {
        "word_table": state["word_emb.weight"].astype(np.float32),
        "pos_table": state["pos_emb.weight"].astype(np.float32),
        # linear layers are stored [out, in]; graphs multiply x @ W
        "head_w": state["head.weight"].T.astype(np.float32).copy(),
        "head_b": state["head.bias"].astype(np.float32),
    }
    for i in range(len(model.layers)):
        p = f"layers.{i}."
        for src, dst in (("q", "q"), ("k", "k"), ("v", "v"), ("o", "o"), ("ff1", "ff1"), ("ff2", "ff2")):
            weights[f"l{i}_{dst}_w"] = state[p + src + ".weight"].T.astype(np.float32).copy()
            weights[f"l{i}_{dst}_b"] = state[p + src + ".bias"].astype(np.float32)
        for norm in ("norm1", "norm2"):
            weights[f"l{i}_{norm}_g"] = state[p + norm + ".weight"].astype(np.float32)
            weights[f"l{i}_{norm}_b"] = state[p + norm + ".bias"].astype(np.float32)
    return weights


def _layer_norm_nodes(nodes: list[bytes], src: str, gamma: str, beta: str, out: str) -> None:
    nodes.append(ow.node("ReduceMean", [src], [out + "_mu"], axes=[-1], keepdims=1))
    nodes.append(ow.node("Sub", [src, out + "_mu"], [out + "_cent"]))
    nodes.append(ow.node("Mul", [out + "_cent", out + "_cent"], [out + "_sq"]))
    nodes.append(ow.node("ReduceMean", [out + "_sq"], [out + "_var"], axes=[-1], keepdims=1))
    nodes.append(ow.node("Add", [out + "_var", "ln_eps"], [out + "_vare"]))
    nodes.append(ow.node("Sqrt", [out + "_vare"], [out + "_std"]))
    nodes.append(ow.node("Div", [out + "_cent", out + "_std"], [out + "_normed"]))
    nodes.append(ow.node("Mul", [out + "_normed", gamma], [out + "_scaled"]))
    nodes.append(ow.node("Add", [out + "_scaled", beta], [out]))


def _trunk_nodes(weights: dict[str, np.ndarray], layer_count: int, dim: int) -> tuple[list[bytes], list[bytes], str]:
    """Shared embedding + transformer nodes; returns (nodes, initializers, final name)."""
    initializers = [ow.tensor(name, array) for name, array in weights.items()]
    initializers += [
        ow.tensor("one_i64", np.array(1, dtype=np.int64)),
        ow.tensor("cumsum_axis", np.array(1, dtype=np.int64)),
        ow.tensor("one_f32", np.array(1.0, dtype=np.float32)),
        ow.tensor("neg_big", np.array(10000.0, dtype=np.float32)),
        ow.tensor("attn_scale", np.array(1.0 / math.sqrt(dim), dtype=np.float32)),
        ow.tensor("ln_eps", np.array(1e-5, dtype=np.float32)),
        ow.tensor("unsqueeze_head", np.array([1], dtype=np.int64)),
    ]
    nodes: list[bytes] = [
        ow.node("CumSum", ["attention_mask", "cumsum_axis"], ["cumsum"]),
        ow.node("Sub", ["cumsum", "one_i64"], ["positions"]),
        ow.node("Gather", ["word_table", "input_ids"], ["word_vecs"]),
        ow.node("Gather", ["pos_table", "positions"], ["pos_vecs"]),
        ow.node("Add", ["word_vecs", "pos_vecs"], ["x0"]),
        ow.node("Cast", ["attention_mask"], ["mask_f"], to=ow.FLOAT),
        ow.node("Sub", ["mask_f", "one_f32"], ["mask_m1"]),
        ow.node("Mul", ["mask_m1", "neg_big"], ["bias_row"]),
        ow.node("Unsqueeze", ["bias_row", "unsqueeze_head"], ["attn_bias"]),
    ]
    x = "x0"
    for i in range(layer_count):
        p = f"l{i}_"
        for proj in ("q", "k", "v"):
            nodes.append(ow.node("MatMul", [x, p + proj + "_w"], [p + proj + "_mm"]))
            nodes.append(ow.node("Add", [p + proj + "_mm", p + proj + "_b"], [p + proj]))
        nodes.append(ow.node("Transpose", [p + "k"], [p + "kt"], perm=[0, 2, 1]))
        nodes.append(ow.node("MatMul", [p + "q", p + "kt"], [p + "qk"]))
        nodes.append(ow.node("Mul", [p + "qk", "attn_scale"], [p + "qks"]))
        nodes.append(ow.node("Add", [p + "qks", "attn_bias"], [p + "scores"]))
        nodes.append(ow.node("Softmax", [p + "scores"], [p + "att"], axis=-1))
        nodes.append(ow.node("MatMul", [p + "att", p + "v"], [p + "ctx"]))
        nodes.append(ow.node("MatMul", [p + "ctx", p + "o_w"], [p + "o_mm"]))
        nodes.append(ow.node("Add", [p + "o_mm", p + "o_b"], [p + "attn_out"]))
        nodes.append(ow.node("Add", [x, p + "attn_out"], [p + "res1"]))
        _layer_norm_nodes(nodes, p + "res1", p + "norm1_g", p + "norm1_b", p + "ln1")
        nodes.append(ow.node("MatMul", [p + "ln1", p + "ff1_w"], [p + "f1"]))
        nodes.append(ow.node("Add", [p + "f1", p + "ff1_b"], [p + "f1b"]))
        nodes.append(ow.node("Relu", [p + "f1b"], [p + "f1r"]))
        nodes.append(ow.node("MatMul", [p + "f1r", p + "ff2_w"], [p + "f2"]))
        nodes.append(ow.node("Add", [p + "f2", p + "ff2_b"], [p + "f2b"]))
        nodes.append(ow.node("Add", [p + "ln1", p + "f2b"], [p + "res2"]))
        _layer_norm_nodes(nodes, p + "res2", p + "norm2_g", p + "norm2_b", p + "out")
        x = p + "out"
    return nodes, initializers, x


def _graph_inputs() -> list[bytes]:
    return [
        ow.value_info("input_ids", ow.INT64, [1, "seq"]),
        ow.value_info("attention_mask", ow.INT64, [1, "seq"]),
    ]


def build_mlm_graph(model: TinyMaskedLm, vocab_size: int) -> bytes:
    weights = _numpy_weights(model)
    dim = weights["word_table"].shape[1]
    nodes, initializers, x = _trunk_nodes(weights, len(model.layers), dim)
    nodes.append(ow.node("MatMul", [x, "head_w"], ["head_mm"]))
    nodes.append(ow.node("Add", ["head_mm", "head_b"], ["logits"]))
    outputs = [ow.value_info("logits", ow.FLOAT, [1, "seq", vocab_size])]
    return ow.model(nodes, initializers, _graph_inputs(), outputs, graph_name="tiny_mlm")


def build_encoder_graph(model: TinyMaskedLm) -> bytes:
    weights = _numpy_weights(model)
    weights.pop("head_w")
    weights.pop("head_b")
    dim = weights["word_table"].shape[1]
    nodes, initializers, x = _trunk_nodes(weights, len(model.layers), dim)
    initializers.append(ow.tensor("pool_axes", np.array([2], dtype=np.int64)))
    nodes.append(ow.node("Unsqueeze", ["mask_f", "pool_axes"], ["mask_col"]))
    nodes.append(ow.node("Mul", [x, "mask_col"], ["kept"]))
    nodes.append(ow.node("ReduceSum", ["kept"], ["summed"], axes=[1], keepdims=0))
    nodes.append(ow.node("ReduceSum", ["mask_col"], ["token_count"], axes=[1], keepdims=0))
    nodes.append(ow.node("Div", ["summed", "token_count"], ["embedding"]))
    outputs = [ow.value_info("embedding", ow.FLOAT, [1, dim])]
    return ow.model(nodes, initializers, _graph_inputs(), outputs, graph_name="tiny_encoder")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    path: Path, kind: str, graph_name: str, vocab_name: str, seq_cap: int, mask_token_id: int | None
) -> None:
    base = path.parent
    manifest: dict[str, object] = {
        "kind": kind,
        "format_version": MANIFEST_VERSION,
        "graph": graph_name,
        "vocabulary": vocab_name,
        "seq_cap": seq_cap,
        "digests": {
            graph_name: _digest(base / graph_name),
            vocab_name: _digest(base / vocab_name),
        },
    }
    if mask_token_id is not None:
        manifest["mask_token_id"] = mask_token_id
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def export_mlm(
    corpus_path: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    steps: int = 400,
    seq_cap: int = 32,
    with_encoder: bool = False,
) -> Path:
    """Train the bundled masked LM on a corpus and export the artifact set.

    Returns the path of the MLM manifest. The graph is structurally
    validated after writing; a missing or misnamed tensor is a hard error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "r", encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle if line.strip()]
    vocab = build_vocab(lines)
    model = train_mlm(lines, vocab, seed=seed, steps=steps, seq_cap=seq_cap)

    graph = build_mlm_graph(model, len(vocab))
    (out_dir / "mlm.onnx").write_bytes(graph)
    with open(out_dir / "vocab.txt", "w", encoding="utf-8") as handle:
        handle.write("\n".join(vocab) + "\n")
    _validate_structure(graph, "logits")
    _write_manifest(
        out_dir / "mlm.manifest.json",
        "mlm",
        "mlm.onnx",
        "vocab.txt",
        seq_cap,
        vocab.index(MASK),
    )
    if with_encoder:
        encoder = build_encoder_graph(model)
        (out_dir / "encoder.onnx").write_bytes(encoder)
        _validate_structure(encoder, "embedding")
        _write_manifest(
            out_dir / "encoder.manifest.json", "encoder", "encoder.onnx", "vocab.txt", seq_cap, None
        )
    # keep the trained weights next to the graph for later re-export
    torch.save(model.state_dict(), out_dir / "mlm.pt")
    return out_dir / "mlm.manifest.json"


def _validate_structure(graph_bytes: bytes, output_name: str) -> None:
    """Check the serialized graph declares the contract tensors."""
    for name in (b"input_ids", b"attention_mask", output_name.encode()):
        if name not in graph_bytes:
            raise ExportError(f"exported graph lacks required tensor {name.decode()!r}")
