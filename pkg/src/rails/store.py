"""Bit-exact file formats: embedding interchange, dataset CSV, memory records,
and run configuration.

EmbeddingFile layout (all integers little-endian):

    magic   8 bytes ASCII  "RLSEMB01"
    name    u32 byte length, then UTF-8 layer id
    n       u32 row count
    d'      u32 feature width
    payload n * d' IEEE-754 float32, row-major

Memory record layout (one per persisted candidate, little-endian):

    length  u32 byte length of the remainder of the record
    query   u32-prefixed UTF-8 string
    layer   u32-prefixed UTF-8 string
    label   u32
    gen     u32
    affinity f64
    dim     u32
    values  dim * f64

Loaders are strict: bad magic, truncation, trailing bytes, or non-finite
floats are format errors naming the byte offset.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PrecomputedMapper, RailsConfig
from .errors import FormatError, InvalidConfigError, InvalidInputError
from .flocking import LabeledDataset
from .maturation import PlasmaMemoryOutput
from .rng import fnv1a64

EMBEDDING_MAGIC = b"RLSEMB01"

_CONFIG_KEYS = {
    "k": int,
    "T": int,
    "G": int,
    "tau": float,
    "rho": float,
    "delta_min": float,
    "delta_max": float,
    "plasma_frac": float,
    "memory_frac": float,
    "seed": int,
    "layers": list,
    "n_classes": int,
}


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write a file via temp-then-rename so readers never see partial output."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- embedding interchange ------------------------------------------------------


def save_embeddings(path: str | Path, layer_id: str, table) -> None:
    """Write a feature table as an EmbeddingFile (float32, row-major)."""
    table = np.ascontiguousarray(np.asarray(table, dtype=np.float32))
    if table.ndim != 2 or table.size == 0:
        raise InvalidInputError("embedding table must be a nonempty 2-d array")
    if not np.all(np.isfinite(table)):
        raise InvalidInputError("embedding table must be finite")
    name = str(layer_id).encode("utf-8")
    blob = b"".join(
        [
            EMBEDDING_MAGIC,
            struct.pack("<I", len(name)),
            name,
            struct.pack("<II", table.shape[0], table.shape[1]),
            table.tobytes(order="C"),
        ]
    )
    atomic_write(path, blob)


class _Reader:
    """Cursor over a byte buffer that reports offsets in its errors."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.what}: truncated while reading {field} "
                f"({n} bytes needed, {len(self.data) - self.pos} left)",
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]

    def f64(self, field: str) -> float:
        return struct.unpack("<d", self.take(8, field))[0]

    def string(self, field: str) -> str:
        length = self.u32(f"{field} length")
        start = self.pos
        raw = self.take(length, field)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.what}: {field} is not valid UTF-8", offset=start) from exc

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.what}: {len(self.data) - self.pos} trailing bytes after payload",
                offset=self.pos,
            )


def load_embeddings(path: str | Path) -> PrecomputedMapper:
    """Strictly parse an EmbeddingFile into a precomputed feature mapper."""
    data = Path(path).read_bytes()
    reader = _Reader(data, f"embedding file {path}")
    magic = reader.take(len(EMBEDDING_MAGIC), "magic")
    if magic != EMBEDDING_MAGIC:
        raise FormatError(
            f"embedding file {path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}",
            offset=0,
        )
    layer_id = reader.string("layer id")
    n = reader.u32("row count")
    width = reader.u32("feature width")
    if n == 0 or width == 0:
        raise FormatError(f"embedding file {path}: empty table ({n} x {width})", offset=reader.pos - 8)
    payload_start = reader.pos
    payload = reader.take(n * width * 4, "payload")
    reader.expect_end()
    table = np.frombuffer(payload, dtype="<f4").reshape(n, width)
    finite = np.isfinite(table)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError(
            f"embedding file {path}: non-finite float at element {bad}",
            offset=payload_start + bad * 4,
        )
    return PrecomputedMapper(layer_id, table.astype(np.float64))


# --- labeled dataset CSV ----------------------------------------------------------


def dataset_to_csv(dataset: LabeledDataset) -> str:
    header = "label," + ",".join(f"v{i}" for i in range(dataset.dim))
    lines = [header]
    for i in range(dataset.n):
        lines.append(f"{int(dataset.y[i])}," + ",".join(repr(float(v)) for v in dataset.X[i]))
    return "\n".join(lines) + "\n"


def save_dataset(path: str | Path, dataset: LabeledDataset) -> None:
    atomic_write(path, dataset_to_csv(dataset))


def load_dataset(path: str | Path) -> LabeledDataset:
    """Parse a dataset CSV; labels must be a contiguous 0-based range."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"dataset file {path}: empty")
    header = lines[0].split(",")
    if header[0] != "label" or header[1:] != [f"v{i}" for i in range(len(header) - 1)]:
        raise FormatError(f"dataset file {path}: bad header {lines[0]!r}")
    dim = len(header) - 1
    if dim == 0:
        raise FormatError(f"dataset file {path}: no value columns")
    labels = []
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise FormatError(
                f"dataset file {path}: line {lineno} has {len(parts)} fields, expected {dim + 1}"
            )
        try:
            labels.append(int(parts[0]))
            values.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"dataset file {path}: line {lineno} is not numeric") from exc
    try:
        return LabeledDataset(np.array(values), np.array(labels))
    except InvalidInputError as exc:
        raise FormatError(f"dataset file {path}: {exc}") from exc


# --- memory store -----------------------------------------------------------------


@dataclass(frozen=True)
class MemoryRecord:
    query_id: str
    layer_id: str
    label: int
    generation: int
    affinity: float
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, MemoryRecord):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.layer_id == other.layer_id
            and self.label == other.label
            and self.generation == other.generation
            and self.affinity == other.affinity
            and np.array_equal(self.values, other.values)
        )


def _encode_record(record: MemoryRecord) -> bytes:
    q = record.query_id.encode("utf-8")
    l = record.layer_id.encode("utf-8")
    values = np.ascontiguousarray(record.values, dtype=np.float64)
    body = b"".join(
        [
            struct.pack("<I", len(q)),
            q,
            struct.pack("<I", len(l)),
            l,
            struct.pack("<II", record.label, record.generation),
            struct.pack("<d", record.affinity),
            struct.pack("<I", values.shape[0]),
            values.tobytes(),
        ]
    )
    return struct.pack("<I", len(body)) + body


class MemoryStore:
    """Append-only persistence for memory candidates plus a JSON manifest.

    One store holds records from a single configuration; appending under a
    different config hash is refused. Static learning never reads the store
    back into flocking; it exists for inspection and future warm starts.
    """

    RECORDS = "records.bin"
    MANIFEST = "manifest.json"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def records_path(self) -> Path:
        return self.root / self.RECORDS

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def append(self, query_id: str, output: PlasmaMemoryOutput, config: RailsConfig) -> None:
        """Persist one query's memory candidates for every layer."""
        self.root.mkdir(parents=True, exist_ok=True)
        digest = config_hash(config)
        if self.exists():
            manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            if manifest["config_hash"] != digest:
                raise InvalidConfigError(
                    [
                        f"memory store {self.root} was written with config hash "
                        f"{manifest['config_hash']}, refusing to append {digest}"
                    ]
                )
        else:
            manifest = {
                "config_hash": digest,
                "seed": config.seed,
                "T": config.T,
                "memory_count": config.memory_size,
                "groups": [],
            }
        chunks = []
        for layer_id in output.memory:
            candidates = output.memory[layer_id]
            for cand in candidates:
                chunks.append(
                    _encode_record(
                        MemoryRecord(
                            query_id=query_id,
                            layer_id=layer_id,
                            label=cand.example.label,
                            generation=cand.generation,
                            affinity=cand.affinity,
                            values=cand.example.values,
                        )
                    )
                )
            manifest["groups"].append(
                {"query_id": query_id, "layer_id": layer_id, "count": len(candidates)}
            )
        with open(self.records_path, "ab") as fh:
            fh.write(b"".join(chunks))
        atomic_write(self.manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def load(self) -> tuple[dict, list[MemoryRecord]]:
        """Read back the manifest and every record, strictly validated."""
        if not self.exists():
            raise FormatError(f"memory store {self.root} has no manifest")
        manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        data = self.records_path.read_bytes() if self.records_path.exists() else b""
        records = []
        pos = 0
        while pos < len(data):
            if pos + 4 > len(data):
                raise FormatError(
                    f"memory store {self.root}: truncated record header", offset=pos
                )
            (length,) = struct.unpack("<I", data[pos : pos + 4])
            start = pos + 4
            if start + length > len(data):
                raise FormatError(
                    f"memory store {self.root}: record of {length} bytes overruns the file",
                    offset=pos,
                )
            reader = _Reader(data[start : start + length], f"memory store {self.root}")
            query_id = reader.string("query id")
            layer_id = reader.string("layer id")
            label = reader.u32("label")
            generation = reader.u32("generation")
            affinity = reader.f64("affinity")
            dim = reader.u32("dim")
            raw = reader.take(dim * 8, "values")
            try:
                reader.expect_end()
            except FormatError as exc:
                raise FormatError(
                    f"memory store {self.root}: record length disagrees with its contents",
                    offset=pos,
                ) from exc
            values = np.frombuffer(raw, dtype="<f8").copy()
            records.append(
                MemoryRecord(query_id, layer_id, label, generation, affinity, values)
            )
            pos = start + length
        counts: dict[tuple[str, str], int] = {}
        for rec in records:
            key = (rec.query_id, rec.layer_id)
            counts[key] = counts.get(key, 0) + 1
        expected = manifest.get("memory_count")
        for group in manifest.get("groups", []):
            key = (group["query_id"], group["layer_id"])
            if counts.get(key, 0) != group["count"] or group["count"] != expected:
                raise FormatError(
                    f"memory store {self.root}: group {key} holds {counts.get(key, 0)} records, "
                    f"manifest says {group['count']} (expected {expected})"
                )
        return manifest, records


def save_memory(
    store_path: str | Path,
    output: PlasmaMemoryOutput,
    config: RailsConfig,
    query_id: str = "q0",
) -> None:
    MemoryStore(store_path).append(query_id, output, config)


def load_memory(store_path: str | Path) -> tuple[dict, list[MemoryRecord]]:
    return MemoryStore(store_path).load()


# --- run configuration ------------------------------------------------------------


def config_to_dict(config: RailsConfig) -> dict:
    return {
        "k": config.k,
        "T": config.T,
        "G": config.G,
        "tau": config.tau,
        "rho": config.rho,
        "delta_min": config.delta_min,
        "delta_max": config.delta_max,
        "plasma_frac": config.plasma_frac,
        "memory_frac": config.memory_frac,
        "seed": config.seed,
        "layers": list(config.layers),
        "n_classes": config.n_classes,
    }


def config_hash(config: RailsConfig) -> str:
    """64-bit FNV-1a over the canonical JSON serialization, hex-encoded."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return f"{fnv1a64(canonical.encode('utf-8')):016x}"


def load_config(path: str | Path) -> RailsConfig:
    """Parse and validate a config JSON; reports every violation at once."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"config file {path}: top level must be a JSON object")
    violations = []
    clean = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            violations.append(f"unknown key {key!r}")
            continue
        expected = _CONFIG_KEYS[key]
        if expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                violations.append(f"{key} must be an integer, got {value!r}")
                continue
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                violations.append(f"{key} must be a number, got {value!r}")
                continue
            value = float(value)
        elif expected is list:
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                violations.append(f"{key} must be a list of strings, got {value!r}")
                continue
            value = tuple(value)
        clean[key] = value
    if violations:
        raise InvalidConfigError(violations)
    return RailsConfig(**clean)
