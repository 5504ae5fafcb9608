"""Word tokenization with byte spans, plus casing-preserving splice-back.

Words are maximal runs of letters, digits, and apostrophes; everything else
(punctuation, whitespace) is preserved verbatim through the spans and is
never a masking or replacement target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Letters/digits without underscore, allowing embedded apostrophes.
_WORD_RE = re.compile(r"(?:[^\W_]|')+", re.UNICODE)


@dataclass(frozen=True)
class TokenizedSentence:
    """A sentence split into case-folded word tokens.

    ``spans`` are byte offsets into the UTF-8 encoding of ``original_text``;
    they always refer to the source text, even on sentences whose ``words``
    were rewritten afterwards.
    """

    words: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    original_text: str

    def __len__(self) -> int:
        return len(self.words)

    def surface(self, position: int) -> str:
        """Original surface form (casing intact) of the word at ``position``."""
        start, end = self.spans[position]
        return self.original_text.encode("utf-8")[start:end].decode("utf-8")

    def with_words(self, replacements: dict[int, str]) -> "TokenizedSentence":
        """Copy with the words at the given positions swapped out."""
        words = list(self.words)
        for position, word in replacements.items():
            words[position] = word
        return TokenizedSentence(tuple(words), self.spans, self.original_text)


def tokenize(text: str) -> TokenizedSentence:
    words: list[str] = []
    spans: list[tuple[int, int]] = []
    # Cumulative byte offset of each character boundary.
    byte_at = [0]
    for ch in text:
        byte_at.append(byte_at[-1] + len(ch.encode("utf-8")))
    for match in _WORD_RE.finditer(text):
        token = match.group()
        if token.strip("'") == "":
            continue  # bare quote runs are punctuation, not words
        words.append(token.casefold())
        spans.append((byte_at[match.start()], byte_at[match.end()]))
    return TokenizedSentence(tuple(words), tuple(spans), text)


def apply_casing(surface: str, word: str) -> str:
    """Re-apply the casing pattern of ``surface`` to ``word``.

    All-caps stays all-caps, an initial capital stays an initial capital,
    anything else is left as the (lowercase) replacement.
    """
    if len(surface) > 1 and surface.isupper():
        return word.upper()
    if surface[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def splice(sentence: TokenizedSentence, replacements: dict[int, str]) -> str:
    """Splice replacement words into the sentence's byte spans.

    Positions not mentioned keep their original bytes, so punctuation and
    spacing survive untouched. Replacement casing follows ``apply_casing``.
    """
    if not replacements:
        return sentence.original_text
    raw = sentence.original_text.encode("utf-8")
    pieces: list[bytes] = []
    cursor = 0
    for position in sorted(replacements):
        start, end = sentence.spans[position]
        surface = raw[start:end].decode("utf-8")
        pieces.append(raw[cursor:start])
        pieces.append(apply_casing(surface, replacements[position]).encode("utf-8"))
        cursor = end
    pieces.append(raw[cursor:])
    return b"".join(pieces).decode("utf-8")
