"""Export tooling for the sentence-repair toolkit's external model files."""

__version__ = "0.1.0"

from .embeddings import convert_embeddings
from .export import build_encoder_graph, build_mlm_graph, export_mlm

__all__ = ["build_encoder_graph", "build_mlm_graph", "convert_embeddings", "export_mlm"]
