"""Immune-inspired robust classification.

The pipeline classifies a query by gathering class-balanced nearest neighbors
in each feature layer (flocking), evolving those candidates toward the query
with selection, cross-over, and mutation (affinity maturation), and majority
voting over the highest-affinity survivors of every layer (consensus). An
advisory sensing stage scores the query's outlierness without ever touching
the prediction.
"""

from .core import (
    GREEDY_TAU,
    Candidate,
    Example,
    FeatureMapper,
    IdentityMapper,
    Population,
    PrecomputedMapper,
    RailsConfig,
    RandomProjectionMapper,
    affinity_score,
    batch_affinity,
    neg_euclidean,
)
from .decision import (
    Prediction,
    PredictResult,
    ThreatReport,
    calibration_scores,
    consensus,
    predict,
    sense,
    threat_scores,
)
from .errors import (
    FormatError,
    InternalInvariantError,
    InvalidConfigError,
    InvalidInputError,
    RailsError,
)
from .flocking import FlockEntry, FlockResult, LabeledDataset, flock
from .harness import (
    AttackSpec,
    BlobSpec,
    CanonicalBenchmark,
    EvalReport,
    EvalRow,
    LearningCurve,
    attack,
    build_mappers,
    canonical_benchmark,
    curves_csv,
    evaluate,
    knn_majority_predict,
    learning_curves,
    make_blobs,
    nn1_predict,
    simplex_means,
)
from .maturation import (
    MaturationRun,
    PlasmaMemoryOutput,
    crossover,
    extract_plasma_memory,
    init_population,
    mutate,
    select_mate,
    select_parent,
    softmax_weights,
    step_generation,
)
from .rng import fnv1a64, substream
from .store import (
    MemoryRecord,
    MemoryStore,
    config_hash,
    config_to_dict,
    load_config,
    load_dataset,
    load_embeddings,
    load_memory,
    save_dataset,
    save_embeddings,
    save_memory,
)

__version__ = "0.1.0"
