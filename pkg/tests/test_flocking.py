import math

import numpy as np
import pytest

from rails import (
    Example,
    IdentityMapper,
    InvalidConfigError,
    InvalidInputError,
    LabeledDataset,
    RandomProjectionMapper,
    flock,
)


def brute_force_flock(dataset, mapper, query, k):
    """Independent oracle: plain-python exhaustive scan with (distance, row) sort."""
    feats = [mapper.map(dataset.X[i]) for i in range(dataset.n)]
    fq = mapper.map(query.values)
    result = {}
    for c in range(dataset.n_classes):
        rows = [int(r) for r in dataset.class_rows(c)]
        ranked = sorted(rows, key=lambda r: (math.dist(feats[r], fq), r))
        result[c] = ranked[:k]
    return result


class TestLabeledDataset:
    def test_class_index_partitions_rows(self, five_point_dataset):
        ds = five_point_dataset
        all_rows = np.concatenate([ds.class_rows(c) for c in range(ds.n_classes)])
        assert sorted(all_rows.tolist()) == list(range(ds.n))

    def test_rejects_gap_in_labels(self):
        with pytest.raises(InvalidInputError, match="contiguous"):
            LabeledDataset(np.array([[0.1], [0.2]]), np.array([0, 2]))

    def test_rejects_out_of_range_values(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset(np.array([[1.5]]), np.array([0]))

    def test_from_examples_requires_labels(self):
        with pytest.raises(InvalidInputError):
            LabeledDataset.from_examples([Example([0.1])])


class TestFlock:
    def test_two_class_worked_example(self, five_point_dataset, identity):
        query = Example([0.05, 0.0])
        result = flock(five_point_dataset, [identity], query, k=2)
        class_a = result.class_entries("identity", 0)
        class_b = result.class_entries("identity", 1)
        assert [e.example.values.tolist() for e in class_a] == [[0.0, 0.0], [0.5, 0.0]]
        assert [e.example.values.tolist() for e in class_b] == [[0.9, 1.0], [1.0, 1.0]]
        # sorted by descending affinity
        assert class_a[0].affinity > class_a[1].affinity
        assert class_b[0].affinity > class_b[1].affinity

    def test_query_on_training_point_returns_it(self, five_point_dataset, identity):
        query = Example([0.5, 0.0])
        result = flock(five_point_dataset, [identity], query, k=1)
        entry = result.class_entries("identity", 0)[0]
        assert entry.row == 1
        assert entry.affinity == 0.0

    def test_per_layer_results_match_per_layer_oracle(self):
        rng = np.random.default_rng(21)
        ds = LabeledDataset(rng.random((60, 4)), rng.integers(0, 3, 60))
        mappers = [IdentityMapper(dim=4), RandomProjectionMapper("proj:2", 4, 2, seed=5)]
        query = Example(rng.random(4))
        result = flock(ds, mappers, query, k=4)
        for mapper in mappers:
            oracle = brute_force_flock(ds, mapper, query, 4)
            for c in range(3):
                got = [e.row for e in result.class_entries(mapper.layer_id, c)]
                assert got == oracle[c], f"layer {mapper.layer_id} class {c}"

    def test_class_balance(self, five_point_dataset, identity):
        result = flock(five_point_dataset, [identity], Example([0.4, 0.4]), k=2)
        entries = result.layer_entries("identity")
        assert len(entries) == 2 * five_point_dataset.n_classes
        labels = [e.example.label for e in entries]
        assert labels.count(0) == 2 and labels.count(1) == 2

    def test_ties_break_toward_lower_row(self, identity):
        # rows 0 and 1 are duplicates, both at the same distance from the query
        X = np.array([[0.2, 0.2], [0.2, 0.2], [0.4, 0.4], [0.8, 0.8], [0.9, 0.9]])
        y = np.array([0, 0, 0, 1, 1])
        ds = LabeledDataset(X, y)
        result = flock(ds, [identity], Example([0.0, 0.0]), k=2)
        assert [e.row for e in result.class_entries("identity", 0)] == [0, 1]

    def test_determinism(self, five_point_dataset, identity):
        q = Example([0.3, 0.1])
        r1 = flock(five_point_dataset, [identity], q, k=2)
        r2 = flock(five_point_dataset, [identity], q, k=2)
        assert r1 == r2

    def test_randomized_equivalence_with_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(10):
            n = int(rng.integers(20, 200))
            d = int(rng.integers(2, 8))
            n_classes = int(rng.integers(2, 4))
            labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, n - n_classes)])
            ds = LabeledDataset(rng.random((n, d)), labels)
            k = int(rng.integers(1, ds.min_class_count() + 1))
            mapper = IdentityMapper(dim=d)
            query = Example(rng.random(d))
            result = flock(ds, [mapper], query, k=k)
            oracle = brute_force_flock(ds, mapper, query, k)
            for c in range(n_classes):
                assert [e.row for e in result.class_entries("identity", c)] == oracle[c]

    def test_k_too_large_names_class(self, five_point_dataset, identity):
        with pytest.raises(InvalidConfigError, match="class 1"):
            flock(five_point_dataset, [identity], Example([0.1, 0.1]), k=3)

    def test_empty_layer_list_rejected(self, five_point_dataset):
        with pytest.raises(InvalidConfigError, match="empty"):
            flock(five_point_dataset, [], Example([0.1, 0.1]), k=1)
