"""Sensing (advisory threat score) and consensus (cross-layer plasma vote).

Sensing scores how far a query sits from the training data, calibrated
against clean points; it never influences the prediction. Consensus pools the
plasma candidates of every layer with equal weight and takes the majority
label, breaking ties toward the smallest class id.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Example, FeatureMapper, RailsConfig, neg_euclidean
from .errors import InternalInvariantError, InvalidConfigError
from .flocking import LabeledDataset, flock
from .maturation import MaturationRun, PlasmaMemoryOutput, extract_plasma_memory
from .rng import substream

DEFAULT_FLAG_PERCENTILE = 95.0


@dataclass(frozen=True)
class ThreatReport:
    """Advisory outlier score for one query; never alters predictions."""

    raw_score: float
    percentile: float
    flagged: bool


@dataclass(frozen=True)
class Prediction:
    """Majority-vote outcome over the pooled plasma candidates."""

    label: int
    vote_counts: Mapping[int, int]
    plasma_total: int

    def __post_init__(self):
        object.__setattr__(self, "vote_counts", dict(self.vote_counts))
        if sum(self.vote_counts.values()) != self.plasma_total:
            raise InternalInvariantError("vote counts must sum to the plasma total")


def _mean_knn_distance(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    values: np.ndarray,
    k: int,
    *,
    exclude_row: int | None = None,
    companions: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Mean distance to the k nearest training rows, averaged over layers."""
    companions = companions or {}
    per_layer = []
    for mapper in mappers:
        feats = mapper.map_batch(mapper.train_value_matrix(dataset.X))
        fq = mapper.map(mapper.query_values(values, companions.get(mapper.layer_id)))
        dist = -neg_euclidean(feats, fq)
        if exclude_row is not None:
            dist = dist.copy()
            dist[exclude_row] = np.inf
        per_layer.append(float(np.sort(dist)[:k].mean()))
    return float(np.mean(per_layer))


def calibration_scores(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    k: int,
    rows: Sequence[int] | None = None,
) -> list[float]:
    """Threat-score calibration from clean points.

    Scores the given dataset rows with the row itself excluded from the
    search, which makes each score behave like that of a held-out clean point.
    """
    if rows is None:
        rows = range(dataset.n)
    scores = []
    for r in rows:
        r = int(r)
        # a training row's companion for a precomputed layer is its table row
        companions = {m.layer_id: m.train_values(r, dataset.X[r]) for m in mappers}
        scores.append(
            _mean_knn_distance(
                dataset, mappers, dataset.X[r], k, exclude_row=r, companions=companions
            )
        )
    return scores


def threat_scores(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    examples: Sequence[Example],
    k: int,
) -> list[float]:
    """The sensing statistic for held-out points (calibration or inspection)."""
    return [_mean_knn_distance(dataset, mappers, e.values, k) for e in examples]


def sense(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    query: Example,
    k: int,
    calibration: Sequence[float],
    *,
    threshold: float = DEFAULT_FLAG_PERCENTILE,
    companions: Mapping[str, np.ndarray] | None = None,
) -> ThreatReport:
    """Score the query's outlierness against a clean calibration distribution.

    The percentile is the strict empirical rank of the raw score within the
    calibration list; ``flagged`` is advisory only.
    """
    if calibration is None or len(calibration) == 0:
        raise InvalidConfigError(["sensing requires a nonempty calibration list"])
    raw = _mean_knn_distance(dataset, mappers, query.values, k, companions=companions)
    cal = np.asarray(calibration, dtype=np.float64)
    percentile = 100.0 * float(np.mean(cal < raw))
    return ThreatReport(raw_score=raw, percentile=percentile, flagged=percentile > threshold)


def consensus(plasma_memory: PlasmaMemoryOutput) -> Prediction:
    """Majority vote over all layers' plasma candidates, equal weight each."""
    counts: Counter[int] = Counter()
    for layer in plasma_memory.plasma:
        for cand in plasma_memory.plasma[layer]:
            counts[cand.example.label] += 1
    total = sum(counts.values())
    if total == 0:
        raise InternalInvariantError("consensus needs at least one plasma candidate")
    top = max(counts.values())
    label = min(c for c, v in counts.items() if v == top)
    return Prediction(label=label, vote_counts=dict(sorted(counts.items())), plasma_total=total)


@dataclass(frozen=True)
class PredictResult:
    prediction: Prediction
    threat: ThreatReport | None
    plasma_memory: PlasmaMemoryOutput
    runs: tuple[MaturationRun, ...] | None = None


def predict(
    dataset: LabeledDataset,
    mappers: Sequence[FeatureMapper],
    query: Example,
    config: RailsConfig,
    *,
    query_index: int = 0,
    calibration: Sequence[float] | None = None,
    threshold: float = DEFAULT_FLAG_PERCENTILE,
    with_sensing: bool = True,
    companions: Mapping[str, np.ndarray] | None = None,
    keep_history: bool = False,
) -> PredictResult:
    """Full pipeline for one query: sense, flock, mature per layer, vote.

    ``query_index`` names the query's RNG substream so that batch evaluations
    replay per query regardless of processing order. Sensing runs only when a
    calibration list is provided and ``with_sensing`` is true; it cannot
    change the prediction either way.
    """
    config.validate_for(dataset.n_classes, dataset.min_class_count())
    threat = None
    if with_sensing and calibration is not None:
        threat = sense(
            dataset, mappers, query, config.k, calibration,
            threshold=threshold, companions=companions,
        )
    flocked = flock(dataset, mappers, query, config.k, companions=companions)
    outputs = []
    runs = []
    for mapper in mappers:
        rng = substream(config.seed, "maturation", int(query_index), mapper.layer_id)
        run = MaturationRun(
            mapper,
            query,
            config,
            flocked.layer_entries(mapper.layer_id),
            rng=rng,
            query_companion=(companions or {}).get(mapper.layer_id),
        )
        run.run()
        outputs.append(extract_plasma_memory(run))
        if keep_history:
            runs.append(run)
    plasma_memory = PlasmaMemoryOutput.merge(outputs)
    prediction = consensus(plasma_memory)
    return PredictResult(
        prediction=prediction,
        threat=threat,
        plasma_memory=plasma_memory,
        runs=tuple(runs) if keep_history else None,
    )
