"""Desk-scale experiment rig: synthetic blob datasets, black-box perturbation
attacks, standard/robust accuracy evaluation, and affinity learning curves.

The canonical benchmark is small enough for CI yet separable enough that
robustness differences between methods are measurable. Attacks are black-box
geometric perturbations under an L-infinity budget on the [0,1] input scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    FeatureMapper,
    IdentityMapper,
    PrecomputedMapper,
    RailsConfig,
    RandomProjectionMapper,
    neg_euclidean,
)
from .decision import calibration_scores, predict
from .errors import InvalidConfigError, InvalidInputError
from .flocking import LabeledDataset
from .maturation import MaturationRun
from .rng import substream

ATTACK_KINDS = ("random-noise", "centroid-drift", "boundary-greedy")

# Canonical benchmark constants, calibrated so the method/baseline robustness
# gap is measurable at CI scale. T=210 because T must be divisible by k*C.
CANONICAL_SEED = 22
CANONICAL_DIM = 8
CANONICAL_CLASSES = 3
CANONICAL_SIGMA = 0.08
CANONICAL_SIDE = 0.60
CANONICAL_N_TRAIN = 300
CANONICAL_N_TEST = 100
CANONICAL_EPSILON = 0.15
CANONICAL_LAYERS = ("identity", "proj:4")


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian class blobs clipped to [0,1]^d."""

    means: np.ndarray
    sigma: float
    n_train: int
    n_test: int
    seed: int

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        violations = []
        if means.ndim != 2 or means.shape[0] < 2:
            violations.append("means must be a (C, d) array with C >= 2")
        else:
            if means.min() < 0.0 or means.max() > 1.0:
                violations.append("means must lie in [0, 1]")
            for i in range(means.shape[0]):
                for j in range(i + 1, means.shape[0]):
                    if np.array_equal(means[i], means[j]):
                        violations.append(f"means of classes {i} and {j} coincide")
        if self.sigma < 0:
            violations.append(f"sigma must be >= 0, got {self.sigma}")
        if self.n_train < 1 or self.n_test < 1:
            violations.append("n_train and n_test must be >= 1 per class")
        if violations:
            raise InvalidConfigError(violations)
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def make_blobs(spec: BlobSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded Gaussian draws around the class means; train/test drawn disjointly."""

    def draw(split: str, count: int) -> LabeledDataset:
        xs, ys = [], []
        for c in range(spec.n_classes):
            rng = substream(spec.seed, "blobs", split, c)
            pts = spec.means[c] + spec.sigma * rng.standard_normal((count, spec.dim))
            xs.append(np.clip(pts, 0.0, 1.0))
            ys.append(np.full(count, c))
        return LabeledDataset(np.concatenate(xs), np.concatenate(ys))

    return draw("train", spec.n_train), draw("test", spec.n_test)


def simplex_means(
    n_classes: int,
    dim: int,
    side: float,
    seed: int,
    *,
    low: float = 0.2,
    high: float = 0.8,
) -> np.ndarray:
    """Class means at the vertices of a regular simplex (pairwise distance
    ``side``) on a seeded random subspace, centered in the box [low, high]^dim.

    Re-seeds deterministically until every vertex falls inside the box.
    """
    if n_classes > dim:
        raise InvalidConfigError([f"need n_classes <= dim, got {n_classes} > {dim}"])
    center = (low + high) / 2.0
    verts = (np.eye(n_classes) - 1.0 / n_classes) * (side / math.sqrt(2.0))
    for attempt in range(64):
        rng = substream(seed, "simplex", attempt)
        basis = rng.standard_normal((n_classes, dim))
        # modified Gram-Schmidt keeps the construction BLAS-independent
        for i in range(n_classes):
            for j in range(i):
                basis[i] -= np.einsum("d,d->", basis[i], basis[j]) * basis[j]
            basis[i] /= math.sqrt(np.einsum("d,d->", basis[i], basis[i]))
        means = center + np.einsum("vc,cd->vd", verts, basis)
        if means.min() >= low and means.max() <= high:
            return means
    raise InvalidConfigError(
        [f"could not place a side-{side} simplex inside [{low}, {high}]^{dim}"]
    )


@dataclass(frozen=True)
class AttackSpec:
    """Black-box perturbation under an elementwise L-infinity budget."""

    kind: str
    epsilon: float
    steps: int = 10
    seed: int = 0

    def __post_init__(self):
        violations = []
        if self.kind not in ATTACK_KINDS:
            violations.append(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        if self.epsilon < 0:
            violations.append(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            violations.append(f"steps must be >= 1, got {self.steps}")
        if violations:
            raise InvalidConfigError(violations)


def _class_centroids(reference: LabeledDataset) -> np.ndarray:
    return np.stack(
        [reference.X[reference.class_rows(c)].mean(axis=0) for c in range(reference.n_classes)]
    )


def _attack_random_noise(X: np.ndarray, spec: AttackSpec) -> np.ndarray:
    rng = substream(spec.seed, "attack", spec.kind)
    return np.clip(X + rng.uniform(-spec.epsilon, spec.epsilon, X.shape), 0.0, 1.0)


def _attack_centroid_drift(
    X: np.ndarray, y: np.ndarray, spec: AttackSpec, reference: LabeledDataset
) -> np.ndarray:
    centroids = _class_centroids(reference)
    diff = X[:, None, :] - centroids[None, :, :]
    dist = np.sqrt(np.einsum("ncd,ncd->nc", diff, diff))
    dist[np.arange(len(X)), y] = np.inf  # nearest *other*-class centroid
    wrong = centroids[np.argmin(dist, axis=1)]
    return np.clip(X + spec.epsilon * np.sign(wrong - X), 0.0, 1.0)


def _nn_margin(points: np.ndarray, label: int, reference: LabeledDataset) -> np.ndarray:
    """1-NN margin (nearest other-class distance minus nearest same-class
    distance) for each row of ``points``; positive means correctly classified."""
    same_rows = reference.class_rows(label)
    other_mask = reference.y != label
    d_same = np.min(
        -_pairwise_neg_dist(points, reference.X[same_rows]), axis=1
    )
    d_other = np.min(
        -_pairwise_neg_dist(points, reference.X[other_mask]), axis=1
    )
    return d_other - d_same


def _pairwise_neg_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]
    return -np.sqrt(np.einsum("nmd,nmd->nm", diff, diff))


def _attack_boundary_greedy(
    X: np.ndarray, y: np.ndarray, spec: AttackSpec, reference: LabeledDataset
) -> np.ndarray:
    adv = X.copy()
    d = X.shape[1]
    for i in range(len(X)):
        x0 = X[i]
        x = adv[i]
        label = int(y[i])
        current = float(_nn_margin(x[None, :], label, reference)[0])
        for _ in range(spec.steps):
            # candidate moves: pin one coordinate at either end of its budget
            trials = np.repeat(x[None, :], 2 * d, axis=0)
            cols = np.repeat(np.arange(d), 2)
            targets = np.empty(2 * d)
            targets[0::2] = np.clip(x0 - spec.epsilon, 0.0, 1.0)
            targets[1::2] = np.clip(x0 + spec.epsilon, 0.0, 1.0)
            trials[np.arange(2 * d), cols] = targets
            margins = _nn_margin(trials, label, reference)
            j = int(np.argmin(margins))
            if margins[j] < current:
                x = trials[j]
                current = float(margins[j])
            else:
                break
        adv[i] = x
    return adv


def attack(
    test: LabeledDataset, spec: AttackSpec, reference: LabeledDataset
) -> LabeledDataset:
    """Perturb every test point within ||x_adv - x||_inf <= epsilon, staying in [0,1]^d."""
    if spec.epsilon == 0.0:
        return LabeledDataset(test.X.copy(), test.y.copy())
    if spec.kind == "random-noise":
        adv = _attack_random_noise(test.X, spec)
    elif spec.kind == "centroid-drift":
        adv = _attack_centroid_drift(test.X, test.y, spec, reference)
    else:
        adv = _attack_boundary_greedy(test.X, test.y, spec, reference)
    budget = np.max(np.abs(adv - test.X))
    if budget > spec.epsilon + 1e-12:
        raise InvalidInputError(f"attack exceeded its budget: {budget} > {spec.epsilon}")
    return LabeledDataset(adv, test.y.copy())


def nn1_predict(train: LabeledDataset, X: np.ndarray) -> np.ndarray:
    """1-nearest-neighbor labels in the input space; ties take the lower row."""
    labels = np.empty(len(X), dtype=np.int64)
    for i, x in enumerate(np.atleast_2d(X)):
        dist = -neg_euclidean(train.X, x)
        labels[i] = train.y[int(np.argmin(dist))]
    return labels


def knn_majority_predict(
    train: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    X: np.ndarray,
    k: int,
    *,
    companions_per_row: Sequence[Mapping[str, np.ndarray]] | None = None,
) -> np.ndarray:
    """Per-layer kNN pooled majority (the deep-kNN stand-in baseline).

    Each layer contributes its k nearest training labels; the pooled vote of
    k * n_layers labels decides, ties toward the smallest class id.
    """
    X = np.atleast_2d(X)
    votes = np.zeros((len(X), train.n_classes), dtype=np.int64)
    for mapper in mappers:
        feats = mapper.map_batch(mapper.train_value_matrix(train.X))
        for i, x in enumerate(X):
            companion = None
            if companions_per_row is not None:
                companion = companions_per_row[i].get(mapper.layer_id)
            fq = mapper.map(mapper.query_values(x, companion))
            dist = -neg_euclidean(feats, fq)
            nearest = np.argsort(dist, kind="stable")[:k]
            votes[i] += np.bincount(train.y[nearest], minlength=train.n_classes)
    return votes.argmax(axis=1)  # argmax takes the smallest id on ties


@dataclass(frozen=True)
class EvalRow:
    method: str
    split: str
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    """SA/RA table for RAILS and the two reference baselines."""

    rows: tuple[EvalRow, ...]
    epsilon: float
    seed: int
    config: RailsConfig

    def accuracy(self, method: str, split: str) -> float:
        for row in self.rows:
            if row.method == method and row.split == split:
                return row.accuracy
        raise KeyError((method, split))

    def to_csv(self) -> str:
        lines = ["method,split,accuracy,epsilon,seed"]
        for row in self.rows:
            lines.append(
                f"{row.method},{row.split},{row.accuracy!r},{self.epsilon!r},{self.seed}"
            )
        return "\n".join(lines) + "\n"


def evaluate(
    train: LabeledDataset,
    test_clean: LabeledDataset,
    test_adv: LabeledDataset,
    config: RailsConfig,
    *,
    mappers: Sequence[FeatureMapper] | None = None,
    epsilon: float,
    with_sensing: bool = True,
    calibration_size: int = 100,
) -> EvalReport:
    """Standard and robust accuracy of RAILS, pooled-kNN majority, and 1-NN."""
    if test_clean.n != test_adv.n:
        raise InvalidInputError(
            f"clean and adversarial sets must match in size: {test_clean.n} vs {test_adv.n}"
        )
    if mappers is None:
        mappers = build_mappers(config, train.dim)
    calibration = None
    if with_sensing:
        rng = substream(config.seed, "calibration")
        rows = rng.choice(train.n, size=min(calibration_size, train.n), replace=False)
        calibration = calibration_scores(train, mappers, config.k, rows=[int(r) for r in rows])

    rows: list[EvalRow] = []
    for split, tset in (("clean", test_clean), ("adversarial", test_adv)):
        hits = 0
        for i in range(tset.n):
            result = predict(
                train, mappers, tset.example(i), config,
                query_index=i, calibration=calibration, with_sensing=with_sensing,
            )
            hits += int(result.prediction.label == tset.y[i])
        rows.append(EvalRow("rails", split, hits / tset.n))
        knn_labels = knn_majority_predict(train, mappers, tset.X, config.k)
        rows.append(EvalRow("knn_majority", split, float(np.mean(knn_labels == tset.y))))
        nn_labels = nn1_predict(train, tset.X)
        rows.append(EvalRow("nn1", split, float(np.mean(nn_labels == tset.y))))
    return EvalReport(tuple(rows), epsilon=float(epsilon), seed=config.seed, config=config)


@dataclass(frozen=True)
class LearningCurve:
    """Per-generation population affinity statistics for one (query, layer)."""

    query_id: str
    layer_id: str
    mean_affinity: tuple[float, ...]
    max_affinity: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.mean_affinity)


def learning_curves(runs: Sequence[MaturationRun], query_id: str) -> list[LearningCurve]:
    """One curve per run, with G+1 entries each (generation 0 included)."""
    curves = []
    for run in runs:
        states = run.states
        curves.append(
            LearningCurve(
                query_id=query_id,
                layer_id=run.mapper.layer_id,
                mean_affinity=tuple(s.mean_affinity() for s in states),
                max_affinity=tuple(s.max_affinity() for s in states),
            )
        )
    return curves


def curves_csv(curves: Sequence[LearningCurve]) -> str:
    lines = ["query_id,layer,generation,mean_affinity,max_affinity"]
    for curve in curves:
        for g, (mean, best) in enumerate(zip(curve.mean_affinity, curve.max_affinity)):
            lines.append(f"{curve.query_id},{curve.layer_id},{g},{mean!r},{best!r}")
    return "\n".join(lines) + "\n"


def build_mappers(
    config: RailsConfig,
    input_dim: int,
    embeddings: Mapping[str, PrecomputedMapper] | None = None,
) -> list[FeatureMapper]:
    """Instantiate the mappers named by ``config.layers``.

    "identity" and "proj:<out_dim>" are built in; any other id must match a
    loaded embedding file's layer id.
    """
    embeddings = embeddings or {}
    mappers: list[FeatureMapper] = []
    for layer_id in config.layers:
        if layer_id == "identity":
            mappers.append(IdentityMapper("identity", dim=input_dim))
        elif layer_id.startswith("proj:"):
            try:
                out_dim = int(layer_id.split(":", 1)[1])
            except ValueError:
                raise InvalidConfigError([f"bad projection layer spec {layer_id!r}"]) from None
            mappers.append(RandomProjectionMapper(layer_id, input_dim, out_dim, config.seed))
        elif layer_id in embeddings:
            mappers.append(embeddings[layer_id])
        else:
            raise InvalidConfigError(
                [f"unknown layer {layer_id!r}: not built in and no embedding file supplies it"]
            )
    return mappers


def canonical_blob_spec(seed: int = CANONICAL_SEED) -> BlobSpec:
    means = simplex_means(CANONICAL_CLASSES, CANONICAL_DIM, CANONICAL_SIDE, seed)
    return BlobSpec(
        means=means,
        sigma=CANONICAL_SIGMA,
        n_train=CANONICAL_N_TRAIN,
        n_test=CANONICAL_N_TEST,
        seed=seed,
    )


def canonical_config(seed: int = CANONICAL_SEED) -> RailsConfig:
    return RailsConfig(
        k=5,
        T=210,
        G=15,
        tau=0.3,
        rho=0.05,
        delta_min=0.0,
        delta_max=0.1,
        seed=seed,
        layers=CANONICAL_LAYERS,
        n_classes=CANONICAL_CLASSES,
    )


def canonical_attack_spec(seed: int = CANONICAL_SEED) -> AttackSpec:
    return AttackSpec(kind="centroid-drift", epsilon=CANONICAL_EPSILON, seed=seed)


@dataclass(frozen=True)
class CanonicalBenchmark:
    blobs: BlobSpec
    config: RailsConfig
    attack: AttackSpec


def canonical_benchmark(seed: int = CANONICAL_SEED) -> CanonicalBenchmark:
    """The versioned desk-scale benchmark all acceptance margins refer to."""
    return CanonicalBenchmark(
        blobs=canonical_blob_spec(seed),
        config=canonical_config(seed),
        attack=canonical_attack_spec(seed),
    )
