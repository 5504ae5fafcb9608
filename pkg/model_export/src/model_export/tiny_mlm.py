"""A small self-contained masked language model.

Single-head post-norm transformer with a ReLU feed-forward block, written
with explicit parameter tensors so its forward pass maps one-to-one onto
the operator set of the exported graph. Trained from a plain-text corpus
(one sentence per line) with standard masked-word prediction.
"""

from __future__ import annotations

import math
import re

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = [PAD, UNK, CLS, SEP, MASK]

_WORD_RE = re.compile(r"(?:[^\W_]|')+", re.UNICODE)


def corpus_words(line: str) -> list[str]:
    return [m.group().casefold() for m in _WORD_RE.finditer(line) if m.group().strip("'")]


def build_vocab(lines: list[str]) -> list[str]:
    words = sorted({w for line in lines for w in corpus_words(line)})
    if not words:
        raise ValueError("training corpus contains no words")
    return SPECIALS + words


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, hidden)
        self.ff2 = nn.Linear(hidden, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        scores = torch.matmul(self.q(x), self.k(x).transpose(1, 2)) * self.scale + bias
        attention = torch.softmax(scores, dim=-1)
        x = self.norm1(x + self.o(torch.matmul(attention, self.v(x))))
        x = self.norm2(x + self.ff2(F.relu(self.ff1(x))))
        return x


class TinyMaskedLm(nn.Module):
    def __init__(self, vocab_size: int, dim: int = 48, hidden: int = 96, layers: int = 2, seq_cap: int = 32):
        super().__init__()
        self.seq_cap = seq_cap
        self.word_emb = nn.Embedding(vocab_size, dim)
        self.pos_emb = nn.Embedding(seq_cap, dim)
        self.layers = nn.ModuleList(EncoderLayer(dim, hidden) for _ in range(layers))
        self.head = nn.Linear(dim, vocab_size)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        positions = attention_mask.cumsum(dim=1) - 1
        x = self.word_emb(input_ids) + self.pos_emb(positions)
        bias = ((attention_mask.float() - 1.0) * 10000.0).unsqueeze(1)
        for layer in self.layers:
            x = layer(x, bias)
        return self.head(x)


def train_mlm(
    lines: list[str],
    vocab: list[str],
    seed: int = 0,
    steps: int = 400,
    batch_size: int = 32,
    seq_cap: int = 32,
    dim: int = 48,
    hidden: int = 96,
    layers: int = 2,
) -> TinyMaskedLm:
    """Masked-word training on CPU; a handful of seconds at toy scale.

    Runs single-threaded: the embedding-gradient scatter is not
    deterministic under intra-op parallelism, and exports must be
    reproducible for a given seed.
    """
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    index = {token: i for i, token in enumerate(vocab)}
    encoded = []
    for line in lines:
        words = corpus_words(line)
        if not words:
            continue
        ids = [index[CLS]] + [index.get(w, index[UNK]) for w in words] + [index[SEP]]
        encoded.append(ids[:seq_cap])
    if not encoded:
        raise ValueError("training corpus contains no sentences")

    model = TinyMaskedLm(len(vocab), dim=dim, hidden=hidden, layers=layers, seq_cap=seq_cap)
    optimizer = torch.optim.Adam(model.parameters(), lr=3e-3)
    generator = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(steps):
        picks = torch.randint(0, len(encoded), (batch_size,), generator=generator)
        width = max(len(encoded[i]) for i in picks.tolist())
        batch = torch.full((batch_size, width), index[PAD], dtype=torch.long)
        mask = torch.zeros((batch_size, width), dtype=torch.long)
        targets = torch.full((batch_size, width), -100, dtype=torch.long)
        for row, pick in enumerate(picks.tolist()):
            ids = encoded[pick]
            batch[row, : len(ids)] = torch.tensor(ids)
            mask[row, : len(ids)] = 1
            # mask one or two interior words per sentence
            interior = len(ids) - 2
            if interior < 1:
                continue
            count = 1 if interior == 1 else int(torch.randint(1, 3, (), generator=generator))
            chosen = 1 + torch.randperm(interior, generator=generator)[:count]
            for position in chosen.tolist():
                targets[row, position] = batch[row, position].item()
                batch[row, position] = index[MASK]
        logits = model(batch, mask)
        loss = F.cross_entropy(logits.view(-1, logits.size(-1)), targets.view(-1), ignore_index=-100)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    return model
