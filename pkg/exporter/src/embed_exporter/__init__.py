"""Embedding exporter: forward-hook a trained model and write one embedding
file per layer, row-aligned with the input dataset."""

from .export import (
    ExportError,
    ExportSpec,
    IdentityModel,
    available_layers,
    compute_embeddings,
    export,
    load_model,
)
from .formats import EMBEDDING_MAGIC, FormatError, read_dataset, write_embeddings

__version__ = "0.1.0"
