"""The evolutionary engine: generation-0 construction, temperature-controlled
parent selection, same-class cross-over, bounded mutation, and plasma/memory
extraction.

Selection draws parents from a softmax over affinities (max-subtracted for
stability); a temperature below ``GREEDY_TAU`` switches to deterministic
argmax. Each generation fully replaces the previous one with T offspring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    GREEDY_TAU,
    Candidate,
    Example,
    FeatureMapper,
    Population,
    RailsConfig,
    neg_euclidean,
)
from .errors import InternalInvariantError, InvalidConfigError, InvalidInputError
from .flocking import FlockEntry
from .rng import substream


def softmax_weights(affinities: np.ndarray, tau: float) -> np.ndarray:
    """Selection probabilities P_i = exp(A_i/tau) / sum_j exp(A_j/tau)."""
    if not tau > 0:
        raise InvalidInputError(f"tau must be > 0, got {tau}")
    z = np.asarray(affinities, dtype=np.float64) / tau
    w = np.exp(z - z.max())
    return w / w.sum()


def _pair_weights(a1: np.ndarray, a2: np.ndarray, tau: float) -> np.ndarray:
    """P(element comes from parent 1) for each pair, two-point softmax."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    m = np.maximum(a1, a2)
    e1 = np.exp((a1 - m) / tau)
    e2 = np.exp((a2 - m) / tau)
    return e1 / (e1 + e2)


def _mutate_batch(
    V: np.ndarray, rho: float, delta_min: float, delta_max: float, rng: np.random.Generator
) -> np.ndarray:
    """Mutate each element with probability rho by +-U[delta_min, delta_max], clip to [0,1].

    Draw order per call: element mask, signs, magnitudes.
    """
    if rho == 0.0:
        return V.copy()
    mask = rng.random(V.shape) < rho
    signs = np.where(rng.random(V.shape) < 0.5, -1.0, 1.0)
    magnitudes = rng.uniform(delta_min, delta_max, V.shape)
    out = V + mask * signs * magnitudes
    np.clip(out, 0.0, 1.0, out=out)
    return out


def mutate(
    x: Example, rho: float, delta_min: float, delta_max: float, rng: np.random.Generator
) -> Example:
    """Elementwise random mutation of one example; label is preserved."""
    if not 0.0 <= rho <= 1.0:
        raise InvalidInputError(f"rho must be in [0, 1], got {rho}")
    if not 0.0 <= delta_min <= delta_max:
        raise InvalidInputError(
            f"need 0 <= delta_min <= delta_max, got [{delta_min}, {delta_max}]"
        )
    values = _mutate_batch(x.values[None, :], rho, delta_min, delta_max, rng)[0]
    return Example(values, x.label)


def crossover(p1: Candidate, p2: Candidate, tau: float, rng: np.random.Generator) -> Example:
    """Mix two same-class parents elementwise, weighted by their affinities.

    Each output element comes from p1 with probability
    exp(A1/tau) / (exp(A1/tau) + exp(A2/tau)), else from p2.
    """
    if p1.example.label != p2.example.label:
        raise InternalInvariantError(
            f"crossover parents must share a label: {p1.example.label} vs {p2.example.label}"
        )
    v1, v2 = p1.example.values, p2.example.values
    if v1.shape != v2.shape:
        raise InternalInvariantError("crossover parents must share a dimension")
    w = float(_pair_weights(p1.affinity, p2.affinity, tau))
    mask = rng.random(v1.shape[0]) < w
    return Example(np.where(mask, v1, v2), p1.example.label)


def select_parent(population: Population, tau: float, rng: np.random.Generator) -> Candidate:
    """Draw one member from the softmax selection distribution over affinities."""
    members = population.members
    aff = population.affinities()
    if tau < GREEDY_TAU:
        return members[int(np.argmax(aff))]
    probs = softmax_weights(aff, tau)
    return members[int(rng.choice(len(members), p=probs))]


def select_mate(
    population: Population, label: int, tau: float, rng: np.random.Generator
) -> Candidate:
    """Draw a second parent restricted to ``label``'s class, weights renormalized.

    Restricting the full-population softmax to one class and renormalizing is
    identical to the softmax over that class's affinities alone.
    """
    members = [c for c in population.members if c.example.label == label]
    if not members:
        raise InternalInvariantError(f"no members of class {label} to mate with")
    aff = np.array([c.affinity for c in members])
    if tau < GREEDY_TAU:
        return members[int(np.argmax(aff))]
    probs = softmax_weights(aff, tau)
    return members[int(rng.choice(len(members), p=probs))]


@dataclass(frozen=True)
class GenerationState:
    """Array view of one generation (values are candidate-space rows)."""

    values: np.ndarray
    labels: np.ndarray
    affinities: np.ndarray
    generation: int

    def __post_init__(self):
        for name in ("values", "labels", "affinities"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def mean_affinity(self) -> float:
        return float(self.affinities.mean())

    def max_affinity(self) -> float:
        return float(self.affinities.max())

    def to_population(self) -> Population:
        members = tuple(
            Candidate(Example(self.values[i], int(self.labels[i])), float(self.affinities[i]), self.generation)
            for i in range(self.size)
        )
        return Population(members, self.generation)


class MaturationRun:
    """One (query, layer) evolution: holds the full generation history.

    The run evolves candidate-space vectors (input space for ordinary layers,
    embedding space for precomputed layers) toward the query under the layer's
    affinity. All randomness comes from the single generator handed in, so a
    run replays bit-identically from its substream key.
    """

    def __init__(
        self,
        mapper: FeatureMapper,
        query: Example,
        config: RailsConfig,
        entries: Sequence[FlockEntry],
        *,
        rng: np.random.Generator | None = None,
        query_companion: np.ndarray | None = None,
    ):
        if not entries:
            raise InvalidConfigError(["maturation needs a nonempty set of flock entries"])
        if config.T % len(entries) != 0:
            raise InvalidConfigError(
                [
                    f"T={config.T} is not divisible by the {len(entries)} flock entries "
                    "(generation-0 copy count T/kC must be integral)"
                ]
            )
        self.mapper = mapper
        self.query = query
        self.config = config
        self.rng = rng if rng is not None else substream(config.seed, "maturation", 0, mapper.layer_id)

        source = np.stack(
            [mapper.train_values(e.row, e.example.values) for e in entries]
        ).astype(np.float64)
        if source.min() < 0.0 or source.max() > 1.0:
            raise InvalidInputError(
                f"layer {mapper.layer_id!r} candidate values must lie in [0, 1]; "
                "rescale precomputed embeddings before maturation"
            )
        labels = np.array([e.example.label for e in entries], dtype=np.int64)
        self._fq = mapper.map(mapper.query_values(query.values, query_companion))

        copies = config.T // len(entries)
        values = np.repeat(source, copies, axis=0)
        values = _mutate_batch(values, config.rho, config.delta_min, config.delta_max, self.rng)
        self._states: list[GenerationState] = [
            GenerationState(
                values,
                np.repeat(labels, copies),
                neg_euclidean(mapper.map_batch(values), self._fq),
                0,
            )
        ]

    @property
    def generations_done(self) -> int:
        return len(self._states) - 1

    def state(self, g: int) -> GenerationState:
        return self._states[g]

    @property
    def states(self) -> tuple[GenerationState, ...]:
        return tuple(self._states)

    def population(self, g: int) -> Population:
        return self._states[g].to_population()

    @property
    def populations(self) -> list[Population]:
        return [s.to_population() for s in self._states]

    def advance(self) -> GenerationState:
        """Produce the next generation: T offspring fully replace the parents."""
        cfg = self.config
        prev = self._states[-1]
        T = prev.size
        aff = prev.affinities
        labels = prev.labels
        rng = self.rng

        if cfg.tau < GREEDY_TAU:
            best = int(np.argmax(aff))
            idx1 = np.full(T, best)
            idx2 = idx1
        else:
            probs = softmax_weights(aff, cfg.tau)
            idx1 = rng.choice(T, size=T, p=probs)
            idx2 = np.empty(T, dtype=np.int64)
            for c in np.unique(labels):
                rows_c = np.flatnonzero(labels == c)
                slots = np.flatnonzero(labels[idx1] == c)
                if slots.size == 0:
                    continue
                probs_c = probs[rows_c]
                probs_c = probs_c / probs_c.sum()
                idx2[slots] = rows_c[rng.choice(rows_c.size, size=slots.size, p=probs_c)]

        w = _pair_weights(aff[idx1], aff[idx2], cfg.tau)
        mask = rng.random((T, prev.values.shape[1])) < w[:, None]
        children = np.where(mask, prev.values[idx1], prev.values[idx2])
        children = _mutate_batch(children, cfg.rho, cfg.delta_min, cfg.delta_max, rng)

        state = GenerationState(
            children,
            labels[idx1].copy(),
            neg_euclidean(self.mapper.map_batch(children), self._fq),
            prev.generation + 1,
        )
        self._states.append(state)
        return state

    def run(self) -> "MaturationRun":
        """Advance until G generations exist (generation 0 always does)."""
        while self.generations_done < self.config.G:
            self.advance()
        return self


def init_population(
    entries: Sequence[FlockEntry],
    mapper: FeatureMapper,
    query: Example,
    config: RailsConfig,
    rng: np.random.Generator,
    *,
    query_companion: np.ndarray | None = None,
) -> Population:
    """Generation 0: T/(k*C) mutated copies of each flocked neighbor.

    Labels are inherited from the source neighbors; values are clipped to
    [0,1]; affinities are computed against the query.
    """
    run = MaturationRun(mapper, query, config, entries, rng=rng, query_companion=query_companion)
    return run.population(0)


def step_generation(run: MaturationRun, g: int) -> Population:
    """Advance ``run`` to generation ``g`` and return it (materialized)."""
    if g < 0 or g > run.config.G:
        raise InvalidInputError(f"generation {g} outside [0, {run.config.G}]")
    while run.generations_done < g:
        run.advance()
    return run.population(g)


@dataclass(frozen=True)
class PlasmaMemoryOutput:
    """Top slices of each layer's final generation, ranked by affinity.

    Plasma is the top ceil(plasma_frac*T), memory the top ceil(memory_frac*T);
    plasma is a prefix of memory by construction. Ties rank by generation
    order (stable sort).
    """

    plasma: Mapping[str, tuple[Candidate, ...]]
    memory: Mapping[str, tuple[Candidate, ...]]

    def __post_init__(self):
        object.__setattr__(self, "plasma", dict(self.plasma))
        object.__setattr__(self, "memory", dict(self.memory))
        for layer, plasma in self.plasma.items():
            if tuple(self.memory[layer][: len(plasma)]) != tuple(plasma):
                raise InternalInvariantError(
                    f"plasma of layer {layer!r} must be a prefix of its memory slice"
                )

    def layers(self) -> tuple[str, ...]:
        return tuple(self.plasma.keys())

    @classmethod
    def merge(cls, outputs: Sequence["PlasmaMemoryOutput"]) -> "PlasmaMemoryOutput":
        plasma: dict[str, tuple[Candidate, ...]] = {}
        memory: dict[str, tuple[Candidate, ...]] = {}
        for out in outputs:
            for layer in out.plasma:
                if layer in plasma:
                    raise InternalInvariantError(f"duplicate layer {layer!r} in merge")
                plasma[layer] = out.plasma[layer]
                memory[layer] = out.memory[layer]
        return cls(plasma, memory)


def extract_plasma_memory(run: MaturationRun) -> PlasmaMemoryOutput:
    """Slice the completed run's final generation into plasma and memory sets."""
    if run.generations_done < run.config.G:
        raise InvalidInputError(
            f"run has {run.generations_done} generations, config demands {run.config.G}"
        )
    state = run.state(run.config.G)
    order = np.argsort(-state.affinities, kind="stable")
    n_memory = run.config.memory_size
    ranked = [
        Candidate(
            Example(state.values[i], int(state.labels[i])),
            float(state.affinities[i]),
            state.generation,
        )
        for i in order[:n_memory]
    ]
    layer = run.mapper.layer_id
    return PlasmaMemoryOutput(
        plasma={layer: tuple(ranked[: run.config.plasma_size])},
        memory={layer: tuple(ranked)},
    )
