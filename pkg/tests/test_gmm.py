import numpy as np
import pytest

from fairmix.gmm import (
    GMMExperimentConfig,
    GaussianMixture,
    assign_modes,
    cross_entropy,
    fit_em,
    gmm_sample,
    labelled_errors,
    make_true_mixture,
    run_gmm_experiment,
    train_classifier,
    write_results_csv,
)

from oracles import matching_distance


def two_blobs(n=5000, seed=0):
    g = GaussianMixture([0.5, 0.5], [[0.0, 0.0], [5.0, 5.0]], [np.eye(2), np.eye(2)])
    return g, gmm_sample(g, n, seed)


class TestGaussianMixture:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.6, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 0.5], [0.0, 1.0]]])


class TestFitEM:
    def test_single_component_is_mle(self):
        x = np.random.default_rng(3).normal(size=(400, 3)) @ np.diag([1.0, 2.0, 0.5]) + 1.0
        g = fit_em(x, 1, seed=0)
        np.testing.assert_allclose(g.means[0], x.mean(axis=0), atol=1e-12)
        cov = np.cov(x.T, bias=True) + 1e-6 * np.eye(3)
        np.testing.assert_allclose(g.covariances[0], cov, atol=1e-12)

    def test_two_blobs_recovered(self):
        g, (x, _) = two_blobs()
        fit = fit_em(x, 2, seed=0)
        assert matching_distance(g.means, fit.means) <= 0.05

    def test_two_blobs_hit_sample_means(self):
        # the residual error against the truth is sampling noise, not EM error
        _, (x, modes) = two_blobs()
        fit = fit_em(x, 2, seed=0)
        sample_means = np.array([x[modes == k].mean(axis=0) for k in range(2)])
        assert matching_distance(sample_means, fit.means) <= 0.01

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_em(np.zeros((2, 2)), 3)

    def test_non_finite(self):
        x = np.ones((10, 2))
        x[3, 1] = np.nan
        with pytest.raises(ValueError):
            fit_em(x, 2)

    @pytest.mark.parametrize("seed", range(6))
    def test_log_likelihood_monotone(self, seed):
        rng = np.random.default_rng(seed)
        truth = make_true_mixture(3, 4, rng)
        x, _ = gmm_sample(truth, 1500, seed)
        fit = fit_em(x, 4, seed=seed, tol=0.0, max_iters=60)
        trace = np.array(fit.log_likelihood_trace)
        assert np.all(np.diff(trace) >= -1e-8)

    def test_covariance_invariants(self):
        _, (x, _) = two_blobs(300)
        fit = fit_em(x, 3, seed=1)
        for c in fit.covariances:
            np.testing.assert_allclose(c, c.T, atol=1e-12)
            assert np.linalg.eigvalsh(c).min() >= 1e-6 * (1 - 1e-6)

    def test_sample_fit_round_trip(self):
        g = GaussianMixture(
            [0.2, 0.3, 0.5],
            [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]],
            [np.eye(2), np.diag([0.5, 2.0]), [[1.0, 0.3], [0.3, 1.0]]],
        )
        x, _ = gmm_sample(g, 100_000, 5)
        fit = fit_em(x, 3, seed=0)
        order = [int(np.argmin(np.linalg.norm(fit.means - m, axis=1))) for m in g.means]
        assert sorted(order) == [0, 1, 2]
        np.testing.assert_allclose(fit.weights[order], g.weights, atol=0.02)
        assert matching_distance(g.means, fit.means) <= 0.05

    def test_deterministic(self):
        _, (x, _) = two_blobs(500)
        a = fit_em(x, 2, seed=4)
        b = fit_em(x, 2, seed=4)
        np.testing.assert_array_equal(a.means, b.means)


class TestSample:
    def test_empty(self):
        g, _ = two_blobs(1)
        x, m = gmm_sample(g, 0, 0)
        assert x.shape == (0, 2) and m.shape == (0,)

    def test_tiny_covariance(self):
        sigma = 1e-3
        g = GaussianMixture([1.0], [[0.0, 0.0]], [sigma**2 * np.eye(2)])
        x, _ = gmm_sample(g, 1000, 1)
        assert np.abs(x).max() <= 6 * sigma

    def test_mode_frequencies(self):
        g = GaussianMixture([0.1, 0.6, 0.3], [[0.0], [1.0], [2.0]], [[[1.0]]] * 3)
        _, m = gmm_sample(g, 100_000, 2)
        np.testing.assert_allclose(np.bincount(m) / 1e5, g.weights, atol=0.01)

    def test_deterministic(self):
        g, _ = two_blobs(1)
        a = gmm_sample(g, 20, 9)
        b = gmm_sample(g, 20, 9)
        np.testing.assert_array_equal(a[0], b[0])


class TestAssignModes:
    def setup_method(self):
        self.g = GaussianMixture(
            [1 / 3] * 3, [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], [np.eye(2)] * 3
        )

    def test_separated(self):
        x = np.array([[0.1, 0.0], [10.0, 0.2], [0.0, 9.9], [9.8, 0.0]])
        y = np.array([2, 0, 1, 0])
        np.testing.assert_array_equal(assign_modes(self.g, x, y), [2, 0, 1])

    def test_tie_goes_to_lower_class(self):
        x = np.array([[0.0, 0.0], [0.1, 0.1], [10.0, 0.0], [0.0, 10.0]])
        y = np.array([2, 0, 1, 1])
        assert assign_modes(self.g, x, y)[0] == 0

    def test_empty_mode_gets_global_majority(self):
        g = GaussianMixture([0.5, 0.5], [[0.0], [100.0]], [[[1.0]], [[1.0]]])
        x = np.array([[0.0], [0.5], [-0.3]])
        y = np.array([1, 1, 0])
        np.testing.assert_array_equal(assign_modes(g, x, y, n_classes=2), [1, 1])

    def test_empty_labelled_set(self):
        with pytest.raises(ValueError):
            assign_modes(self.g, np.zeros((0, 2)), np.zeros(0, dtype=int))

    @pytest.mark.parametrize("seed", range(5))
    def test_heuristic_matches_exhaustive_error(self, seed):
        rng = np.random.default_rng(seed)
        truth = make_true_mixture(2, 4, rng)
        x, _ = gmm_sample(truth, 400, seed)
        fit = fit_em(x, 4, seed=seed)
        xl, yl = gmm_sample(truth, 30, seed + 100)
        yl = (yl + rng.integers(0, 2, size=yl.size)) % 3  # noisy labels over 3 classes
        maj = assign_modes(fit, xl, yl, n_classes=3)
        exh = assign_modes(fit, xl, yl, n_classes=3, method="exhaustive")
        assert labelled_errors(fit, maj, xl, yl) == labelled_errors(fit, exh, xl, yl)
        assert maj.min() >= 0 and maj.max() < 3


class TestClassifier:
    def test_separable(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-2, 0.5, (100, 2)), rng.normal(2, 0.5, (100, 2))])
        y = np.repeat([0, 1], 100)
        clf = train_classifier(x, y, epochs=200, lr=0.1, seed=0)
        assert clf.accuracy(x, y) >= 0.99

    def test_single_class(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        clf = train_classifier(x, np.zeros(20, dtype=int), n_classes=2, seed=0)
        probe = np.random.default_rng(2).normal(size=(50, 3)) * 10
        assert (clf.predict(probe) == 0).all()

    def test_zero_lr(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        y = np.arange(20) % 2
        clf = train_classifier(x, y, lr=0.0, seed=0)
        assert not clf.weights.any() and not clf.biases.any()

    def test_loss_decreases(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(200, 4))
        y = (x[:, 0] + 0.5 * rng.normal(size=200) > 0).astype(int)
        init = train_classifier(x, y, lr=0.0)
        clf = train_classifier(x, y, epochs=50, lr=0.05, seed=3)
        assert cross_entropy(clf, x, y) <= cross_entropy(init, x, y)

    def test_empty(self):
        with pytest.raises(ValueError):
            train_classifier(np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_deterministic(self):
        x = np.random.default_rng(1).normal(size=(50, 3))
        y = np.arange(50) % 3
        a = train_classifier(x, y, epochs=5, seed=7)
        b = train_classifier(x, y, epochs=5, seed=7)
        np.testing.assert_array_equal(a.weights, b.weights)


def small_cfg(**kw):
    base = dict(dims=4, components=2, n_labelled=[3], n_unlabelled=600, n_generated=[0, 200], seeds=[0, 1, 2], epochs=30)
    base.update(kw)
    return GMMExperimentConfig(**base)


class TestExperiment:
    def test_infeasible_config(self):
        with pytest.raises(ValueError):
            small_cfg(n_unlabelled=5)
        with pytest.raises(ValueError):
            small_cfg(seeds=[])

    def test_zero_generated_is_baseline(self):
        from fairmix.gmm import run_seed

        cfg = small_cfg(n_generated=[0], seeds=[0])
        acc = run_seed(cfg, 0)[(3, 0)]
        rows = run_gmm_experiment(cfg)
        assert rows[0]["mean_acc"] == acc and rows[0]["std_acc"] == 0.0

    def test_worker_count_invariance(self):
        cfg = small_cfg()
        assert run_gmm_experiment(cfg, workers=1) == run_gmm_experiment(cfg, workers=2)

    def test_seed_order_invariance(self):
        a = run_gmm_experiment(small_cfg(seeds=[0, 1, 2]))
        b = run_gmm_experiment(small_cfg(seeds=[2, 0, 1]))
        assert [r["mean_acc"] for r in a] == [r["mean_acc"] for r in b]

    def test_csv_columns(self, tmp_path):
        rows = run_gmm_experiment(small_cfg(seeds=[0]))
        path = tmp_path / "r.csv"
        write_results_csv(rows, path)
        header = path.read_text().splitlines()[0]
        assert header == "n_labelled,n_generated,mean_acc,std_acc,n_seeds"

    def test_overlapping_components_gain_is_noise(self):
        # identical means: the fitted modes carry no class information
        cfg = small_cfg(dims=8, components=2, n_unlabelled=2000, n_labelled=[4], n_generated=[0, 500],
                        seeds=list(range(8)), shared_means=True, epochs=50)
        rows = {r["n_generated"]: r for r in run_gmm_experiment(cfg)}
        gains = np.array(rows[500]["per_seed"]) - np.array(rows[0]["per_seed"])
        se = gains.std(ddof=1) / np.sqrt(len(gains))
        assert abs(gains.mean()) <= 3 * se + 0.02

    @pytest.mark.slow
    def test_generated_points_help_2c64d(self):
        cfg = GMMExperimentConfig(dims=64, components=2, n_labelled=[4], n_unlabelled=10_000,
                                  n_generated=[0, 1000], seeds=list(range(10)))
        rows = {r["n_generated"]: r["mean_acc"] for r in run_gmm_experiment(cfg)}
        assert rows[1000] >= rows[0]
