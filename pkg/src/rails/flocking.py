"""Per-class, per-layer k-nearest-neighbor retrieval seeding each maturation run.

For every layer and every class independently, the k training examples with
the highest affinity to the query are gathered, so the initial population is
always class-balanced. Search is an exhaustive scan (exact at desk scale);
ties on equal affinity break toward the lower dataset row index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Example, FeatureMapper, neg_euclidean
from .errors import InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class LabeledDataset:
    """A fully labeled dataset: row matrix X in [0,1]^(n x d), labels y in [0, C).

    Labels must form a contiguous 0-based range with every class nonempty.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 2 or X.size == 0:
            raise InvalidInputError("dataset matrix must be a nonempty 2-d array")
        if y.shape != (X.shape[0],):
            raise InvalidInputError(
                f"labels must be one per row: {y.shape} vs {X.shape[0]} rows"
            )
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("dataset values must be finite")
        if X.min() < 0.0 or X.max() > 1.0:
            raise InvalidInputError("dataset values must lie in [0, 1]")
        if y.min() < 0:
            raise InvalidInputError("labels must be non-negative class ids")
        n_classes = int(y.max()) + 1
        class_rows = tuple(np.flatnonzero(y == c) for c in range(n_classes))
        missing = [c for c, rows in enumerate(class_rows) if rows.size == 0]
        if missing:
            raise InvalidInputError(
                f"labels must form a contiguous range [0, {n_classes}); "
                f"classes {missing} are empty"
            )
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "_class_rows", class_rows)

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "LabeledDataset":
        if any(e.label is None for e in examples):
            raise InvalidInputError("every example in a labeled dataset needs a label")
        return cls(
            np.stack([e.values for e in examples]),
            np.array([e.label for e in examples]),
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self._class_rows)

    def class_rows(self, c: int) -> np.ndarray:
        return self._class_rows[c]

    def min_class_count(self) -> int:
        return min(rows.size for rows in self._class_rows)

    def example(self, row: int) -> Example:
        return Example(self.X[row], int(self.y[row]))


@dataclass(frozen=True)
class FlockEntry:
    """One retrieved neighbor: the training example, its affinity, its row."""

    example: Example
    affinity: float
    row: int


@dataclass(frozen=True)
class FlockResult:
    """k neighbors per (layer, class), each list sorted by descending affinity."""

    entries: Mapping[str, Mapping[int, tuple[FlockEntry, ...]]]

    def layers(self) -> tuple[str, ...]:
        return tuple(self.entries.keys())

    def classes(self) -> tuple[int, ...]:
        first = next(iter(self.entries.values()))
        return tuple(sorted(first.keys()))

    def class_entries(self, layer_id: str, c: int) -> tuple[FlockEntry, ...]:
        return self.entries[layer_id][c]

    def layer_entries(self, layer_id: str) -> tuple[FlockEntry, ...]:
        """All k*C entries of one layer, classes in ascending order."""
        per_class = self.entries[layer_id]
        return tuple(e for c in sorted(per_class) for e in per_class[c])


def flock(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    query: Example,
    k: int,
    *,
    companions: Mapping[str, np.ndarray] | None = None,
) -> FlockResult:
    """Gather the k highest-affinity training examples per class per layer.

    ``companions`` supplies the query's feature rows for precomputed-embedding
    layers, keyed by layer_id.
    """
    if not mappers:
        raise InvalidConfigError(["layer list is empty"])
    ids = [m.layer_id for m in mappers]
    if len(set(ids)) != len(ids):
        raise InvalidConfigError([f"duplicate layer ids: {ids}"])
    if k < 1:
        raise InvalidConfigError([f"k must be >= 1, got {k}"])
    for c in range(dataset.n_classes):
        n_c = dataset.class_rows(c).size
        if k > n_c:
            raise InvalidConfigError(
                [f"k={k} exceeds the {n_c} training examples of class {c}"]
            )
    companions = companions or {}

    result: dict[str, dict[int, tuple[FlockEntry, ...]]] = {}
    for mapper in mappers:
        feats = mapper.map_batch(mapper.train_value_matrix(dataset.X))
        fq = mapper.map(mapper.query_values(query.values, companions.get(mapper.layer_id)))
        if fq.shape[0] != feats.shape[1]:
            raise InvalidInputError(
                f"layer {mapper.layer_id!r} dimension mismatch: "
                f"expected {feats.shape[1]}, received {fq.shape[0]}"
            )
        aff = neg_euclidean(feats, fq)
        per_class: dict[int, tuple[FlockEntry, ...]] = {}
        for c in range(dataset.n_classes):
            rows = dataset.class_rows(c)
            # stable sort on descending affinity: ties keep ascending row order
            order = np.argsort(-aff[rows], kind="stable")[:k]
            chosen = rows[order]
            per_class[c] = tuple(
                FlockEntry(dataset.example(int(r)), float(aff[r]), int(r)) for r in chosen
            )
        result[mapper.layer_id] = per_class
    return FlockResult(result)
