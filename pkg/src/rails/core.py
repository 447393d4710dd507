"""Shared domain types, feature mappers, and the affinity function.

Affinity between two points in a layer's feature space is the negative
Euclidean distance of their mapped vectors: higher means closer, 0 means the
mapped vectors coincide. Every affinity computation in the package funnels
through :func:`neg_euclidean` and ``FeatureMapper.map_batch`` so that batch and
single-point results are bit-identical.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .rng import substream

# Below this temperature, softmax selection switches to deterministic argmax.
# tau itself must stay strictly positive; greedy mode is this cutoff, not tau=0.
GREEDY_TAU = 1e-12


def _unit_interval_array(values, what: str = "values") -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError(f"{what} must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} must be finite")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise InvalidInputError(f"{what} must lie in [0, 1]; saw range [{lo}, {hi}]")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Example:
    """A point in [0,1]^d with an optional 0-based class label.

    For layers backed by a precomputed embedding table, candidate examples live
    in that layer's feature space instead of the input space; the [0,1] domain
    constraint applies either way.
    """

    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _unit_interval_array(self.values))
        if self.label is not None:
            lbl = int(self.label)
            if lbl < 0:
                raise InvalidInputError(f"label must be a non-negative class id, got {lbl}")
            object.__setattr__(self, "label", lbl)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.label, self.values.tobytes()))

    def __repr__(self):
        return f"Example(values={self.values.tolist()}, label={self.label})"


class FeatureMapper(ABC):
    """Deterministic map from candidate vectors to one layer's feature space.

    Besides the feature map itself, a mapper defines where maturation
    candidates live for its layer (the "candidate space"): ordinary mappers
    evolve candidates in the input space, while precomputed-embedding mappers
    evolve them directly in the embedding space.
    """

    def __init__(self, layer_id: str):
        self.layer_id = str(layer_id)

    @property
    @abstractmethod
    def input_dim(self) -> int | None:
        """Expected candidate-vector length, or None to accept any."""

    @abstractmethod
    def _map_batch(self, X: np.ndarray) -> np.ndarray: ...

    def map_batch(self, X) -> np.ndarray:
        """Map rows of ``X`` (n, d) into feature space (n, d')."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        expected = self.input_dim
        if expected is not None and X.shape[1] != expected:
            raise InvalidInputError(
                f"layer {self.layer_id!r} dimension mismatch: "
                f"expected {expected}, received {X.shape[1]}"
            )
        return self._map_batch(X)

    def map(self, values) -> np.ndarray:
        """Map a single vector; same arithmetic path as :meth:`map_batch`."""
        return self.map_batch(np.asarray(values, dtype=np.float64)[None, :])[0]

    # --- candidate-space hooks ------------------------------------------------

    def train_values(self, row: int, values: np.ndarray) -> np.ndarray:
        """Candidate-space vector for training row ``row`` (default: as-is)."""
        return values

    def train_value_matrix(self, X: np.ndarray) -> np.ndarray:
        """Candidate-space matrix for the whole training set."""
        return np.asarray(X, dtype=np.float64)

    def query_values(self, values: np.ndarray, companion: np.ndarray | None = None) -> np.ndarray:
        """Candidate-space vector for a query; ``companion`` is ignored here."""
        return np.asarray(values, dtype=np.float64)

    def __repr__(self):
        return f"{type(self).__name__}(layer_id={self.layer_id!r})"


class IdentityMapper(FeatureMapper):
    """Layer whose features are the input coordinates themselves (d' = d)."""

    def __init__(self, layer_id: str = "identity", dim: int | None = None):
        super().__init__(layer_id)
        self._dim = None if dim is None else int(dim)

    @property
    def input_dim(self) -> int | None:
        return self._dim

    def _map_batch(self, X: np.ndarray) -> np.ndarray:
        return X


class RandomProjectionMapper(FeatureMapper):
    """Seeded Gaussian random projection d -> out_dim, fixed at construction.

    Entries are iid N(0, 1/out_dim); the matrix depends only on
    (seed, layer_id) so identical configs rebuild identical layers.
    """

    def __init__(self, layer_id: str, input_dim: int, output_dim: int, seed: int):
        super().__init__(layer_id)
        if input_dim < 1 or output_dim < 1:
            raise InvalidConfigError(
                [f"projection dims must be >= 1, got {input_dim} -> {output_dim}"]
            )
        rng = substream(seed, "projection", self.layer_id)
        matrix = rng.standard_normal((output_dim, input_dim)) / np.sqrt(output_dim)
        matrix.setflags(write=False)
        self.matrix = matrix
        self._input_dim = int(input_dim)

    @property
    def input_dim(self) -> int:
        return self._input_dim

    def _map_batch(self, X: np.ndarray) -> np.ndarray:
        # einsum keeps a fixed summation order, so a row maps to the same bits
        # whether it arrives alone or inside a batch.
        return np.einsum("nd,od->no", X, self.matrix)


class PrecomputedMapper(FeatureMapper):
    """Embedding-table layer: training rows resolve by index, queries by a
    companion vector supplied alongside the query.

    Candidates for this layer live directly in the embedding space, so the
    feature map is the identity on that space. Arbitrary new input-space
    vectors cannot be mapped.
    """

    def __init__(self, layer_id: str, table):
        super().__init__(layer_id)
        table = np.array(table, dtype=np.float64)
        if table.ndim != 2 or table.size == 0:
            raise InvalidInputError("embedding table must be a nonempty 2-d array")
        if not np.all(np.isfinite(table)):
            raise InvalidInputError("embedding table must be finite")
        table.setflags(write=False)
        self.table = table

    @property
    def input_dim(self) -> int:
        return self.table.shape[1]

    @property
    def n_rows(self) -> int:
        return self.table.shape[0]

    def _map_batch(self, X: np.ndarray) -> np.ndarray:
        return X

    def row(self, index: int) -> np.ndarray:
        return self.table[index]

    def train_values(self, row: int, values: np.ndarray) -> np.ndarray:
        return self.table[row]

    def train_value_matrix(self, X: np.ndarray) -> np.ndarray:
        n = np.asarray(X).shape[0]
        if n != self.n_rows:
            raise InvalidInputError(
                f"layer {self.layer_id!r} embedding table has {self.n_rows} rows "
                f"but the dataset has {n}"
            )
        return self.table

    def query_values(self, values: np.ndarray, companion: np.ndarray | None = None) -> np.ndarray:
        if companion is None:
            raise InvalidInputError(
                f"layer {self.layer_id!r} resolves by index; queries need a companion "
                "embedding vector"
            )
        companion = np.asarray(companion, dtype=np.float64)
        if companion.ndim != 1 or companion.shape[0] != self.input_dim:
            raise InvalidInputError(
                f"layer {self.layer_id!r} companion dimension mismatch: "
                f"expected {self.input_dim}, received {companion.shape[-1]}"
            )
        return companion


def neg_euclidean(features: np.ndarray, query_features: np.ndarray) -> np.ndarray:
    """Negative L2 distance from each row of ``features`` to ``query_features``."""
    diff = features - query_features
    return -np.sqrt(np.einsum("ij,ij->i", diff, diff))


def affinity_score(mapper: FeatureMapper, a: Example, b: Example) -> float:
    """Affinity of ``a`` and ``b`` in mapper's layer: -||f(a) - f(b)||_2.

    Always <= 0 and symmetric; 0 exactly when the mapped vectors coincide.
    """
    if a.dim != b.dim:
        raise InvalidInputError(f"dimension mismatch: expected {a.dim}, received {b.dim}")
    fa = mapper.map_batch(a.values[None, :])
    fb = mapper.map(b.values)
    return float(neg_euclidean(fa, fb)[0])


def batch_affinity(mapper: FeatureMapper, examples: Sequence[Example], query: Example) -> list[float]:
    """Affinity of every example to ``query``, order preserved.

    Element i equals ``affinity_score(mapper, examples[i], query)`` bit-exactly.
    """
    if len(examples) == 0:
        raise InvalidInputError("batch_affinity requires a nonempty example set")
    dims = {e.dim for e in examples}
    if len(dims) != 1 or next(iter(dims)) != query.dim:
        raise InvalidInputError(
            f"dimension mismatch: expected {query.dim}, received {sorted(dims)}"
        )
    X = np.stack([e.values for e in examples])
    feats = mapper.map_batch(X)
    fq = mapper.map(query.values)
    return [float(v) for v in neg_euclidean(feats, fq)]


@dataclass(frozen=True)
class Candidate:
    """A labeled population member with its affinity to the run's query."""

    example: Example
    affinity: float
    generation: int

    def __post_init__(self):
        if self.example.label is None:
            raise InvalidInputError("candidates must carry a label")
        if self.generation < 0:
            raise InvalidInputError("generation must be >= 0")


@dataclass(frozen=True)
class Population:
    """One generation: an ordered, fixed-size multiset of candidates."""

    members: tuple[Candidate, ...]
    generation: int

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise InvalidInputError("population must be nonempty")

    @property
    def size(self) -> int:
        return len(self.members)

    def affinities(self) -> np.ndarray:
        return np.array([c.affinity for c in self.members])

    def labels(self) -> np.ndarray:
        return np.array([c.example.label for c in self.members])

    def values_matrix(self) -> np.ndarray:
        return np.stack([c.example.values for c in self.members])


@dataclass(frozen=True)
class RailsConfig:
    """All run hyperparameters.

    ``layers`` holds layer id strings understood by the mapper factory:
    "identity", "proj:<out_dim>", or the layer_id of a loaded embedding file.
    ``n_classes`` is optional; when set, the T % (k*C) divisibility rule is
    checked at construction as well as at run time against the dataset.
    """

    k: int = 10
    T: int = 200
    G: int = 10
    tau: float = 0.1
    rho: float = 0.05
    delta_min: float = 0.0
    delta_max: float = 0.1
    plasma_frac: float = 0.05
    memory_frac: float = 0.25
    seed: int = 0
    layers: tuple[str, ...] = ("identity",)
    n_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(str(l) for l in self.layers))
        violations = self._violations()
        if violations:
            raise InvalidConfigError(violations)

    def _violations(self) -> list[str]:
        v = []
        if self.k < 1:
            v.append(f"k must be >= 1, got {self.k}")
        if self.T < 1:
            v.append(f"T must be >= 1, got {self.T}")
        if self.G < 0:
            v.append(f"G must be >= 0, got {self.G}")
        if not self.tau > 0:
            v.append(f"tau must be > 0, got {self.tau} (greedy mode is tau < {GREEDY_TAU}, not tau = 0)")
        if not 0.0 <= self.rho <= 1.0:
            v.append(f"rho must be in [0, 1], got {self.rho}")
        if not 0.0 <= self.delta_min <= self.delta_max:
            v.append(
                f"need 0 <= delta_min <= delta_max, got [{self.delta_min}, {self.delta_max}]"
            )
        if not 0.0 < self.plasma_frac <= 1.0:
            v.append(f"plasma_frac must be in (0, 1], got {self.plasma_frac}")
        if not self.plasma_frac <= self.memory_frac <= 1.0:
            v.append(
                f"need plasma_frac <= memory_frac <= 1, got {self.plasma_frac} > {self.memory_frac}"
            )
        if not 0 <= self.seed < 2**64:
            v.append(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.layers:
            v.append("layers must be nonempty")
        if self.n_classes is not None:
            if self.n_classes < 2:
                v.append(f"n_classes must be >= 2, got {self.n_classes}")
            elif self.k >= 1 and self.T % (self.k * self.n_classes) != 0:
                v.append(
                    f"T={self.T} is not divisible by k*C={self.k * self.n_classes} "
                    "(generation-0 copy count T/kC must be integral)"
                )
        return v

    def validate_for(self, n_classes: int, min_class_count: int) -> None:
        """Run-time checks against an actual dataset; raises on violation."""
        v = []
        if self.n_classes is not None and self.n_classes != n_classes:
            v.append(f"config says {self.n_classes} classes but dataset has {n_classes}")
        if self.T % (self.k * n_classes) != 0:
            v.append(
                f"T={self.T} is not divisible by k*C={self.k * n_classes} "
                "(generation-0 copy count T/kC must be integral)"
            )
        if self.k > min_class_count:
            v.append(f"k={self.k} exceeds the smallest class size {min_class_count}")
        if v:
            raise InvalidConfigError(v)

    def with_seed(self, seed: int) -> "RailsConfig":
        return replace(self, seed=int(seed))

    @property
    def plasma_size(self) -> int:
        return int(np.ceil(self.plasma_frac * self.T))

    @property
    def memory_size(self) -> int:
        return int(np.ceil(self.memory_frac * self.T))
