"""On-disk formats the exporter speaks: the dataset CSV it reads and the
embedding file it writes.

EmbeddingFile layout (little-endian): magic "RLSEMB01", u32-length-prefixed
UTF-8 layer id, u32 row count, u32 feature width, then row-major float32
payload. This must stay byte-compatible with the classification engine's
loader.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

EMBEDDING_MAGIC = b"RLSEMB01"


class FormatError(Exception):
    pass


def write_embeddings(path: str | Path, layer_id: str, table: np.ndarray) -> None:
    table = np.ascontiguousarray(np.asarray(table, dtype=np.float32))
    if table.ndim != 2 or table.size == 0:
        raise FormatError(f"layer {layer_id!r}: embedding table must be nonempty and 2-d")
    if not np.all(np.isfinite(table)):
        raise FormatError(f"layer {layer_id!r}: embedding table contains non-finite values")
    name = str(layer_id).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", table.shape[0], table.shape[1]))
        fh.write(table.tobytes(order="C"))


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a `label,v0,...` CSV into (X float32, labels int64)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"dataset file {path}: empty")
    header = lines[0].split(",")
    dim = len(header) - 1
    if header[0] != "label" or dim < 1 or header[1:] != [f"v{i}" for i in range(dim)]:
        raise FormatError(f"dataset file {path}: bad header {lines[0]!r}")
    labels = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise FormatError(f"dataset file {path}: line {lineno} has {len(parts)} fields")
        try:
            labels.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"dataset file {path}: line {lineno} is not numeric") from exc
    return np.asarray(rows, dtype=np.float32), np.asarray(labels, dtype=np.int64)
