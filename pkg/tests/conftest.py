from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from maskrepair.embeddings import EmbeddingStore

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def toy_store() -> EmbeddingStore:
    """Four words with hand-checkable cosines.

    alpha.bravo = 0.6, bravo.charlie = 0.8, alpha.charlie = 0, delta is
    orthogonal to everything.
    """
    vectors = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.6, 0.8, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    return EmbeddingStore(["alpha", "bravo", "charlie", "delta"], vectors)
