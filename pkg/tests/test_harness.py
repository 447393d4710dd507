import numpy as np
import pytest

from rails import (
    AttackSpec,
    BlobSpec,
    InvalidConfigError,
    MaturationRun,
    RailsConfig,
    attack,
    build_mappers,
    canonical_benchmark,
    curves_csv,
    evaluate,
    flock,
    learning_curves,
    make_blobs,
    nn1_predict,
    simplex_means,
    substream,
)


def two_blob_spec(sigma=0.05, n_train=60, n_test=40, seed=5, d=2):
    means = np.full((2, d), 0.25)
    means[1] = 0.75
    return BlobSpec(means=means, sigma=sigma, n_train=n_train, n_test=n_test, seed=seed)


class TestMakeBlobs:
    def test_sigma_zero_collapses_to_means(self):
        spec = two_blob_spec(sigma=0.0)
        train, _ = make_blobs(spec)
        for c in range(2):
            rows = train.class_rows(c)
            assert np.all(train.X[rows] == spec.means[c])

    def test_exact_counts_per_class(self):
        train, test = make_blobs(two_blob_spec(n_train=17, n_test=9))
        for c in range(2):
            assert train.class_rows(c).size == 17
            assert test.class_rows(c).size == 9

    def test_separated_blobs_give_near_perfect_1nn(self):
        train, test = make_blobs(two_blob_spec())
        acc = float(np.mean(nn1_predict(train, test.X) == test.y))
        assert acc >= 0.99

    def test_points_stay_in_unit_cube(self):
        spec = two_blob_spec(sigma=0.5, seed=8)
        train, test = make_blobs(spec)
        for ds in (train, test):
            assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0

    @pytest.mark.parametrize("kwargs", [dict(sigma=-0.1), dict(n_train=0), dict(n_test=0)])
    def test_degenerate_specs_rejected(self, kwargs):
        with pytest.raises(InvalidConfigError):
            two_blob_spec(**kwargs)

    def test_identical_means_rejected(self):
        with pytest.raises(InvalidConfigError, match="coincide"):
            BlobSpec(means=np.full((2, 3), 0.5), sigma=0.1, n_train=5, n_test=5, seed=0)


class TestSimplexMeans:
    def test_pairwise_distances_equal_side(self):
        means = simplex_means(3, 8, 0.6, seed=4)
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(means[i] - means[j]) == pytest.approx(0.6, rel=1e-9)

    def test_means_inside_box(self):
        means = simplex_means(4, 8, 0.5, seed=9)
        assert means.min() >= 0.2 and means.max() <= 0.8


class TestAttack:
    @pytest.fixture
    def blob_pair(self):
        return make_blobs(two_blob_spec())

    @pytest.mark.parametrize("kind", ["random-noise", "centroid-drift", "boundary-greedy"])
    def test_epsilon_zero_is_identity(self, blob_pair, kind):
        train, test = blob_pair
        adv = attack(test, AttackSpec(kind=kind, epsilon=0.0, seed=1), train)
        assert np.array_equal(adv.X, test.X)

    @pytest.mark.parametrize("kind", ["random-noise", "centroid-drift", "boundary-greedy"])
    def test_budget_respected_everywhere(self, blob_pair, kind):
        train, test = blob_pair
        eps = 0.13
        adv = attack(test, AttackSpec(kind=kind, epsilon=eps, steps=4, seed=2), train)
        assert np.max(np.abs(adv.X - test.X)) <= eps + 1e-12
        assert adv.X.min() >= 0.0 and adv.X.max() <= 1.0
        assert np.array_equal(adv.y, test.y)

    def test_centroid_drift_damages_1nn(self):
        bench = canonical_benchmark()
        train, test = make_blobs(bench.blobs)
        adv = attack(test, AttackSpec(kind="centroid-drift", epsilon=0.2, seed=3), train)
        clean_acc = float(np.mean(nn1_predict(train, test.X) == test.y))
        adv_acc = float(np.mean(nn1_predict(train, adv.X) == adv.y))
        assert adv_acc < clean_acc

    def test_boundary_greedy_reduces_margin(self, blob_pair):
        train, test = blob_pair
        adv = attack(test, AttackSpec(kind="boundary-greedy", epsilon=0.2, steps=6, seed=4), train)
        clean_acc = float(np.mean(nn1_predict(train, test.X) == test.y))
        adv_acc = float(np.mean(nn1_predict(train, adv.X) == adv.y))
        assert adv_acc < clean_acc

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidConfigError, match="unknown attack kind"):
            AttackSpec(kind="teleport", epsilon=0.1)


class TestEvaluate:
    def small_config(self):
        return RailsConfig(
            k=2, T=12, G=2, tau=0.3, rho=0.1, seed=13,
            layers=("identity", "proj:2"), n_classes=2,
        )

    def test_epsilon_zero_makes_sa_equal_ra(self):
        train, test = make_blobs(two_blob_spec(n_train=20, n_test=10))
        config = self.small_config()
        adv = attack(test, AttackSpec(kind="random-noise", epsilon=0.0, seed=1), train)
        report = evaluate(train, test, adv, config, epsilon=0.0)
        for method in ("rails", "knn_majority", "nn1"):
            assert report.accuracy(method, "clean") == report.accuracy(method, "adversarial")

    def test_training_points_classified_perfectly_greedy(self):
        train, _ = make_blobs(two_blob_spec(n_train=10, n_test=5))
        config = RailsConfig(
            k=1, T=4, G=1, tau=1e-15, rho=0.0, seed=7, layers=("identity",), n_classes=2,
        )
        report = evaluate(train, train, train, config, epsilon=0.0, with_sensing=False)
        assert report.accuracy("rails", "clean") == 1.0

    def test_report_reproducible_to_full_precision(self):
        train, test = make_blobs(two_blob_spec(n_train=15, n_test=8))
        config = self.small_config()
        adv = attack(test, AttackSpec(kind="centroid-drift", epsilon=0.1, seed=13), train)
        a = evaluate(train, test, adv, config, epsilon=0.1)
        b = evaluate(train, test, adv, config, epsilon=0.1)
        assert a.to_csv() == b.to_csv()

    def test_size_mismatch_rejected(self):
        train, test = make_blobs(two_blob_spec(n_train=15, n_test=8))
        from rails import InvalidInputError

        with pytest.raises(InvalidInputError, match="match in size"):
            evaluate(train, test, train, self.small_config(), epsilon=0.0)

    def test_csv_shape(self):
        train, test = make_blobs(two_blob_spec(n_train=15, n_test=6))
        report = evaluate(train, test, test, self.small_config(), epsilon=0.0, with_sensing=False)
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "method,split,accuracy,epsilon,seed"
        assert len(lines) == 1 + 6  # 3 methods x 2 splits


class TestLearningCurves:
    def run_for(self, config, query=None):
        train, test = make_blobs(two_blob_spec(n_train=10, n_test=5))
        query = query or test.example(0)
        mappers = build_mappers(config, train.dim)
        flocked = flock(train, mappers, query, config.k)
        runs = []
        for mapper in mappers:
            runs.append(
                MaturationRun(
                    mapper, query, config,
                    flocked.layer_entries(mapper.layer_id),
                    rng=substream(config.seed, "maturation", 0, mapper.layer_id),
                ).run()
            )
        return runs

    def test_curve_lengths_are_g_plus_one(self):
        config = RailsConfig(k=2, T=8, G=4, tau=0.3, rho=0.1, seed=19,
                             layers=("identity", "proj:2"), n_classes=2)
        curves = learning_curves(self.run_for(config), "q0")
        assert len(curves) == 2
        for curve in curves:
            assert len(curve.mean_affinity) == 5
            assert len(curve.max_affinity) == 5
            assert all(v <= 0 for v in curve.mean_affinity)

    def test_row_count_in_csv(self):
        config = RailsConfig(k=2, T=8, G=4, tau=0.3, rho=0.1, seed=19,
                             layers=("identity", "proj:2"), n_classes=2)
        text = curves_csv(learning_curves(self.run_for(config), "q0"))
        lines = text.strip().split("\n")
        assert lines[0] == "query_id,layer,generation,mean_affinity,max_affinity"
        assert len(lines) == 1 + 5 * 2  # (G+1) rows per layer

    def test_g_zero_yields_single_row_per_layer(self):
        config = RailsConfig(k=2, T=8, G=0, tau=0.3, rho=0.1, seed=19,
                             layers=("identity",), n_classes=2)
        curves = learning_curves(self.run_for(config), "q0")
        assert len(curves[0]) == 1

    def test_greedy_max_affinity_constant_after_collapse(self):
        config = RailsConfig(k=2, T=8, G=4, tau=1e-15, rho=0.0, seed=19,
                             layers=("identity",), n_classes=2)
        curve = learning_curves(self.run_for(config), "q0")[0]
        assert len(set(curve.max_affinity[1:])) == 1


class TestCanonicalBenchmark:
    def test_shape_and_validity(self):
        bench = canonical_benchmark()
        assert bench.blobs.n_classes == 3
        assert bench.blobs.dim == 8
        assert bench.config.T % (bench.config.k * 3) == 0
        assert bench.attack.kind == "centroid-drift"
        assert bench.attack.epsilon == 0.15
        assert bench.config.layers == ("identity", "proj:4")

    def test_is_deterministic(self):
        a = canonical_benchmark()
        b = canonical_benchmark()
        assert np.array_equal(a.blobs.means, b.blobs.means)
        assert a.config == b.config
