"""Convert published text-format word vectors to the binary cache format.

Text input: one record per line, ``word c1 c2 ... cD``, UTF-8. Output: the
cache the repair toolkit loads directly: magic ``MDEF``, u32 format
version, u32 word count, u32 dimension, length-prefixed UTF-8 words, then
V*D little-endian float32 components, row-major, unit-normalized. All
integers little-endian. Rows are normalized here so both load paths agree
to float32 precision.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

CACHE_MAGIC = b"MDEF"
CACHE_VERSION = 1


class ConversionError(ValueError):
    pass


def convert_embeddings(text_path: str | Path, out_path: str | Path) -> int:
    """Convert a text vector file; returns the number of words written."""
    words: list[str] = []
    seen: set[str] = set()
    rows: list[list[float]] = []
    dim: int | None = None
    with open(text_path, "rb") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            fields = line.split()
            word, components = fields[0].casefold(), fields[1:]
            if not components:
                raise ConversionError(f"line {lineno}: record has no vector components")
            if dim is None:
                dim = len(components)
            elif len(components) != dim:
                raise ConversionError(
                    f"line {lineno}: expected {dim} components, found {len(components)}"
                )
            try:
                values = [float(c) for c in components]
            except ValueError:
                raise ConversionError(f"line {lineno}: non-numeric vector component") from None
            norm = math.sqrt(math.fsum(v * v for v in values))
            if norm == 0.0 or not math.isfinite(norm):
                raise ConversionError(f"line {lineno}: vector cannot be normalized")
            if word in seen:
                continue
            seen.add(word)
            words.append(word)
            rows.append([v / norm for v in values])
    if not words:
        raise ConversionError("empty vocabulary: no parseable embedding records")
    with open(out_path, "wb") as out:
        out.write(CACHE_MAGIC)
        out.write(struct.pack("<III", CACHE_VERSION, len(words), dim))
        for word in words:
            encoded = word.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
        for row in rows:
            out.write(struct.pack(f"<{dim}f", *row))
    return len(words)
