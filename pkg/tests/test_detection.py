"""
PlantWatch Tests - Detectors, the sliding window and model persistence.
"""

import itertools
import math
import tempfile
import unittest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
from sklearn.svm import OneClassSVM

from detection.errors import DimensionError, TrainingError
from detection.gaussian import INDEPENDENT, MULTIVARIATE, choose_epsilon, fit_gaussian, gaussian_score
from detection.iforest import IsolationForestModel, average_path_length, fit_score_iforest
from detection.lof import LofModel, score_lof
from detection.ocsvm import dual_objective, fit_ocsvm, ocsvm_predict, training_outlier_fraction
from detection.pipeline import KINDS, DetectorPipeline, Monitor
from detection.window import SlidingWindow, WindowVerdict, first_alarm, run_window
from utils import Config


def harmonic(n):
    return math.fsum(1.0 / i for i in range(1, n + 1))


def exact_c(n):
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


class TestOcsvm(unittest.TestCase):
    """Test the SMO one-class SVM."""

    def test_single_cluster_containment(self):
        """Test that near-identical points all lie inside the support."""
        rng = np.random.default_rng(1)
        X = np.tile([0.3, -1.2, 2.0], (100, 1)) + rng.normal(scale=1e-5, size=(100, 3))
        model = fit_ocsvm(X, nu=0.05, gamma=1.0)
        self.assertTrue(np.all(model.decision_function(X) >= -1e-4))

    def test_dual_constraints(self):
        """Test that the coefficients sum to one and respect the box."""
        X = np.random.default_rng(2).normal(size=(80, 4))
        model = fit_ocsvm(X, nu=0.1)
        self.assertAlmostEqual(model.dual_coef.sum(), 1.0, delta=1e-9)
        self.assertTrue(np.all(model.dual_coef > 0.0))
        self.assertTrue(np.all(model.dual_coef <= model.upper_bound + 1e-15))

    def test_matches_libsvm(self):
        """Test the dual objective and decisions against scikit-learn's libsvm solver."""
        rng = np.random.default_rng(3)
        nu = 0.05
        for trial in range(50):
            d = 2 if trial % 2 == 0 else 26
            X = rng.normal(size=(50, d))
            with self.subTest(trial=trial, d=d):
                ours = fit_ocsvm(X, nu=nu, tol=1e-7)
                oracle = OneClassSVM(kernel="rbf", nu=nu, gamma=ours.gamma, tol=1e-7).fit(X)
                scale = nu * X.shape[0]
                alpha = np.zeros(X.shape[0])
                alpha[oracle.support_] = oracle.dual_coef_.ravel()
                self.assertAlmostEqual(alpha.sum(), scale, places=6)
                K = np.exp(-ours.gamma * ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
                oracle_objective = 0.5 * alpha @ K @ alpha
                self.assertLess(abs(dual_objective(ours) * scale ** 2 - oracle_objective),
                                1e-6 * oracle_objective)
                np.testing.assert_allclose(ours.decision_function(X) * scale, oracle.decision_function(X),
                                           atol=1e-3)
                self.assertLessEqual(training_outlier_fraction(ours, X, margin=1e-3), nu + 0.02)

    def test_large_nu_outside_fraction(self):
        """Test that nu = 0.5 leaves about half the training rows on or outside the boundary."""
        X = np.random.default_rng(4).normal(size=(50, 2))
        model = fit_ocsvm(X, nu=0.5)
        outside = int(np.sum(model.decision_function(X) < 1e-6))
        self.assertGreaterEqual(outside, 15)
        self.assertLessEqual(outside, 35)

    def test_far_point_is_anomalous(self):
        """Test the kernel decay limit and the sign of interior points."""
        X = np.random.default_rng(5).normal(size=(60, 2))
        model = fit_ocsvm(X)
        far = np.array([[1e3, 1e3]])
        self.assertAlmostEqual(model.decision_function(far)[0], -model.rho, places=12)
        self.assertGreater(model.rho, 0.0)
        self.assertTrue(model.predict(far)[0])
        best = X[np.argmax(model.decision_function(X))]
        self.assertFalse(model.predict(best[None, :])[0])
        anomaly, score = ocsvm_predict(model, np.vstack([best, far[0]]))
        self.assertEqual(anomaly.tolist(), [False, True])
        self.assertAlmostEqual(score[1], -model.rho, places=12)

    def test_boundary_by_bisection(self):
        """Test that bisection along a ray locates a sign flip of the decision."""
        X = np.random.default_rng(6).normal(size=(60, 2))
        model = fit_ocsvm(X)
        center, direction = X.mean(axis=0), np.array([0.6, 0.8])

        def decision(t):
            return model.decision_function((center + t * direction)[None, :])[0]

        lo, hi = 0.0, 50.0
        self.assertGreater(decision(lo), 0.0)
        self.assertLess(decision(hi), 0.0)
        while hi - lo > 1e-10:
            mid = (lo + hi) / 2.0
            if decision(mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        self.assertGreaterEqual(decision(lo), 0.0)
        self.assertLess(decision(hi), 0.0)
        self.assertLess(hi - lo, 1e-9)

    def test_errors(self):
        """Test training and dimension errors."""
        with self.assertRaises(TrainingError):
            fit_ocsvm(np.ones((10, 3)))
        with self.assertRaises(TrainingError):
            fit_ocsvm(np.zeros((1, 3)))
        with self.assertRaises(ValueError):
            fit_ocsvm(np.random.default_rng(0).normal(size=(10, 2)), nu=0.0)
        model = fit_ocsvm(np.random.default_rng(0).normal(size=(20, 3)))
        with self.assertRaises(DimensionError):
            model.decision_function(np.zeros((1, 4)))

    def test_deterministic(self):
        """Test that refitting the same rows gives the same model."""
        X = np.random.default_rng(7).normal(size=(40, 3))
        first, second = fit_ocsvm(X), fit_ocsvm(X)
        np.testing.assert_array_equal(first.dual_coef, second.dual_coef)
        self.assertEqual(first.rho, second.rho)


class TestSlidingWindow(unittest.TestCase):
    """Test the window alarm rule."""

    def assert_exhaustive(self, size, threshold, required):
        for bits in itertools.product((False, True), repeat=size):
            verdicts = run_window(bits, size, threshold)
            self.assertTrue(all(v is WindowVerdict.WARMING_UP for v in verdicts[:-1]))
            expected = WindowVerdict.ATTACK if sum(bits) >= required else WindowVerdict.NORMAL
            self.assertIs(verdicts[-1], expected)

    def test_exhaustive_fifteen(self):
        """Test every 15-sample window at a 60% threshold."""
        self.assertEqual(SlidingWindow(15, 0.6).required, 9)
        self.assert_exhaustive(15, 0.6, 9)

    def test_exhaustive_five(self):
        """Test every 5-sample window at a 60% threshold."""
        self.assertEqual(SlidingWindow(5, 0.6).required, 3)
        self.assert_exhaustive(5, 0.6, 3)

    def test_required_counts(self):
        """Test the ceiling of theta times W."""
        self.assertEqual(SlidingWindow(10, 0.7).required, 7)
        self.assertEqual(SlidingWindow(20, 0.8).required, 16)
        self.assertEqual(SlidingWindow(5, 1.0).required, 5)

    def test_monotone_in_anomalies(self):
        """Test that marking one more sample anomalous never clears an attack."""
        size, threshold = 10, 0.7
        for bits in itertools.product((False, True), repeat=size):
            before = run_window(bits, size, threshold)[-1]
            if before is not WindowVerdict.ATTACK:
                continue
            for i in range(size):
                if not bits[i]:
                    flipped = bits[:i] + (True,) + bits[i + 1:]
                    self.assertIs(run_window(flipped, size, threshold)[-1], WindowVerdict.ATTACK)

    def test_eviction(self):
        """Test that old anomalies leave the window."""
        window = SlidingWindow(5, 0.6)
        for _ in range(5):
            window.push(True)
        self.assertIs(window.verdict(), WindowVerdict.ATTACK)
        window.push(False)
        window.push(False)
        self.assertIs(window.verdict(), WindowVerdict.ATTACK)
        self.assertIs(window.push(False), WindowVerdict.NORMAL)
        self.assertEqual(window.anomalies, 2)

    def test_normal_stream_never_fires(self):
        """Test that an all-normal stream never alarms."""
        self.assertIsNone(first_alarm([False] * 1000, 15, 0.6))
        self.assertEqual(set(run_window([False] * 100, 15, 0.6)[14:]), {WindowVerdict.NORMAL})

    def test_first_alarm(self):
        """Test the index of the first full window that fires."""
        self.assertEqual(first_alarm([False] * 20 + [True] * 20, 15, 0.6), 28)
        self.assertEqual(first_alarm([True] * 20, 15, 0.6), 14)

    def test_reset_and_arguments(self):
        """Test reset and argument validation."""
        window = SlidingWindow(3, 0.6)
        for _ in range(3):
            window.push(True)
        window.reset()
        self.assertIs(window.push(True), WindowVerdict.WARMING_UP)
        with self.assertRaises(ValueError):
            SlidingWindow(0, 0.6)
        with self.assertRaises(ValueError):
            SlidingWindow(5, 0.0)
        with self.assertRaises(ValueError):
            SlidingWindow(5, 1.5)


class TestIsolationForest(unittest.TestCase):
    """Test the Isolation Forest baseline."""

    def test_average_path_length(self):
        """Test the path-length correction against harmonic sums."""
        self.assertEqual(float(average_path_length(2)), 1.0)
        self.assertEqual(float(average_path_length(1)), 0.0)
        for n in (3, 8, 100, 256):
            self.assertAlmostEqual(float(average_path_length(n)), exact_c(n), delta=1e-12)
        np.testing.assert_allclose(average_path_length([1, 2, 8]), [0.0, 1.0, exact_c(8)], atol=1e-12)

    def test_single_tree_hand_trace(self):
        """Test E[h] of a one-tree forest against a manual walk of the tree."""
        X = np.random.default_rng(8).normal(size=(8, 2))
        model = IsolationForestModel(trees=1, subsample=8, seed=0).fit(X)
        self.assertEqual(model.psi, 8)
        tree = model.forest.estimators_[0].tree_
        queries = np.vstack([X, [[0.0, 0.0], [3.0, -3.0]]])
        expected = []
        for x in queries:
            node, depth = 0, 0
            while tree.children_left[node] != -1:
                go_left = np.float32(x[tree.feature[node]]) <= tree.threshold[node]
                node = tree.children_left[node] if go_left else tree.children_right[node]
                depth += 1
            expected.append(depth + exact_c(int(tree.n_node_samples[node])))
        np.testing.assert_allclose(model.path_lengths(queries), expected, atol=1e-9)
        np.testing.assert_allclose(model.scores(queries), 2.0 ** (-np.array(expected) / exact_c(8)), atol=1e-9)

    def test_inlier_and_outlier(self):
        """Test that the cluster centre scores below the threshold and a far point above."""
        X = np.random.default_rng(9).normal(size=(300, 2))
        model = IsolationForestModel(trees=100, subsample=256, nu=0.05, seed=3).fit(X)
        self.assertFalse(model.predict([[0.0, 0.0]])[0])
        self.assertTrue(model.predict([[8.0, 8.0]])[0])
        scores = model.scores(X)
        self.assertTrue(np.all((scores > 0.0) & (scores < 1.0)))
        self.assertLessEqual(np.mean(scores > model.threshold), 0.05 + 1e-9)
        np.testing.assert_array_equal(fit_score_iforest(X, [[0.0, 0.0], [8.0, 8.0]], seed=3),
                                      model.scores([[0.0, 0.0], [8.0, 8.0]]))

    def test_seeded_refit(self):
        """Test that the same seed rebuilds the same forest."""
        X = np.random.default_rng(10).normal(size=(120, 3))
        first = IsolationForestModel(seed=4).fit(X)
        second = IsolationForestModel.from_dict(first.to_dict(), X)
        np.testing.assert_array_equal(first.scores(X), second.scores(X))
        with self.assertRaises(DimensionError):
            first.scores(np.zeros((1, 2)))


def brute_force_lof(X, queries, k):
    """Novelty-mode LOF straight from the definitions."""
    def dist(a, b):
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))

    D = dist(X, X)
    np.fill_diagonal(D, np.inf)
    neighbours = np.argsort(D, axis=1)[:, :k]
    k_distance = np.sort(D, axis=1)[:, k - 1]
    lrd = np.empty(len(X))
    for i in range(len(X)):
        reach = [max(D[i, j], k_distance[j]) for j in neighbours[i]]
        lrd[i] = 1.0 / (np.mean(reach) + 1e-10)
    result = []
    Q = dist(queries, X)
    for q in range(len(queries)):
        nearest = np.argsort(Q[q])[:k]
        reach = [max(Q[q, j], k_distance[j]) for j in nearest]
        lrd_q = 1.0 / (np.mean(reach) + 1e-10)
        result.append(np.mean(lrd[nearest]) / lrd_q)
    return np.array(result)


class TestLof(unittest.TestCase):
    """Test the Local Outlier Factor baseline."""

    def test_matches_brute_force(self):
        """Test LOF values against a direct implementation of the formula."""
        rng = np.random.default_rng(11)
        X = rng.normal(size=(60, 3))
        queries = rng.normal(scale=1.5, size=(25, 3))
        model = LofModel(k=5).fit(X)
        np.testing.assert_allclose(model.scores(queries), brute_force_lof(X, queries, 5), rtol=1e-9)

    def test_inlier_calibration(self):
        """Test that a training point inside a uniform grid has LOF near one."""
        rng = np.random.default_rng(12)
        grid = np.array([[i, j] for i in range(15) for j in range(15)], dtype=float) / 14.0
        X = grid + rng.uniform(-1e-3, 1e-3, size=grid.shape)
        model = LofModel(k=20).fit(X)
        centre = X[np.argmin(np.linalg.norm(X - 0.5, axis=1))]
        self.assertAlmostEqual(model.scores(centre[None, :])[0], 1.0, delta=0.2)
        self.assertAlmostEqual(score_lof(X, centre[None, :])[0], model.scores(centre[None, :])[0], places=12)

    def test_far_outlier_monotone(self):
        """Test that LOF is large far away and grows along a ray."""
        rng = np.random.default_rng(13)
        X = rng.uniform(size=(200, 2))
        model = LofModel(k=20).fit(X)
        direction = np.array([0.6, 0.8])
        values = model.scores(np.array([0.5 + t * direction for t in (2.0, 4.0, 8.0, 16.0)]))
        self.assertGreater(values[0], 5.0)
        self.assertTrue(np.all(np.diff(values) > 0.0))
        self.assertTrue(model.predict(np.array([[10.0, 10.0]]))[0])

    def test_duplicate_points_stay_finite(self):
        """Test that a training set of duplicates keeps every LOF finite."""
        X = np.zeros((30, 2))
        model = LofModel(k=5).fit(X)
        values = model.scores(np.array([[0.0, 0.0], [1.0, 0.0]]))
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(values[0], 1.0)
        self.assertGreater(values[1], 1e9)
        self.assertEqual(model.predict(np.array([[0.0, 0.0], [1.0, 0.0]])).tolist(), [False, True])

    def test_threshold_and_errors(self):
        """Test the training-quantile threshold and the neighbour count precondition."""
        X = np.random.default_rng(14).normal(size=(100, 2))
        model = LofModel(k=20, nu=0.05).fit(X)
        training = -model.lof.negative_outlier_factor_
        self.assertAlmostEqual(model.threshold, float(np.quantile(training, 0.95)))
        self.assertAlmostEqual(model.offset, model.threshold - 1.0)
        with self.assertRaises(TrainingError):
            LofModel(k=20).fit(X[:20])


class TestGaussian(unittest.TestCase):
    """Test the Gaussian density baselines."""

    def test_closed_form_density(self):
        """Test the univariate density at the mean of {0, 0, 2, 2}."""
        model = fit_gaussian(np.array([[0.0], [0.0], [2.0], [2.0]]), INDEPENDENT)
        self.assertEqual(model.mean[0], 1.0)
        self.assertEqual(model.variance[0], 1.0)
        self.assertAlmostEqual(model.density([[1.0]])[0], 1.0 / math.sqrt(2.0 * math.pi), places=12)
        model.log_epsilon = math.log(0.1)
        density, anomaly = gaussian_score(model, [[1.0], [5.0]])
        self.assertAlmostEqual(density[0], 1.0 / math.sqrt(2.0 * math.pi), places=12)
        self.assertEqual(anomaly.tolist(), [False, True])

    def test_multivariate_matches_independent_on_diagonal_data(self):
        """Test that a diagonal covariance gives the product of marginals."""
        levels = itertools.product((-1.0, 1.0), (-2.0, 2.0), (-0.5, 0.5))
        X = np.array(list(levels)) + np.array([3.0, -1.0, 0.25])
        iga = fit_gaussian(X, INDEPENDENT)
        mga = fit_gaussian(X, MULTIVARIATE, ridge=0.0)
        self.assertEqual(mga.ridge, 0.0)
        np.testing.assert_array_equal(np.diag(mga.covariance), iga.variance)
        queries = np.random.default_rng(15).normal(size=(20, 3))
        np.testing.assert_allclose(mga.log_density(queries), iga.log_density(queries), atol=1e-9)

    def test_density_peaks_at_mean(self):
        """Test that no sampled point beats the density at the mean."""
        rng = np.random.default_rng(16)
        for mode in (INDEPENDENT, MULTIVARIATE):
            model = fit_gaussian(rng.normal(size=(50, 3)) @ rng.normal(size=(3, 3)), mode)
            peak = model.log_density(model.mean[None, :])[0]
            samples = model.mean + rng.normal(scale=0.5, size=(1000, 3))
            self.assertTrue(np.all(model.log_density(samples) <= peak))

    def test_variance_floor_and_errors(self):
        """Test the variance floor, the row-count precondition and unknown modes."""
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        self.assertEqual(fit_gaussian(X, INDEPENDENT, var_floor=1e-9).variance[0], 1e-9)
        with self.assertRaises(TrainingError):
            fit_gaussian(np.zeros((3, 3)), MULTIVARIATE)
        with self.assertRaises(ValueError):
            fit_gaussian(X, "mixture")

    def test_collinear_features_regularized(self):
        """Test that duplicated features still give a positive definite covariance."""
        x = np.random.default_rng(17).normal(size=40)
        model = fit_gaussian(np.column_stack([x, x, 2.0 * x]), MULTIVARIATE)
        self.assertGreaterEqual(model.ridge, 1e-6)
        self.assertTrue(np.all(np.isfinite(model.log_density(np.zeros((1, 3))))))

    def test_choose_epsilon(self):
        """Test that the tuned epsilon separates benign and attack captures."""
        train = np.linspace(-10.0, 0.0, 101)
        validation = [(np.full(20, -1.0), 0), (np.full(20, -9.9), 1)]
        log_epsilon, f1 = choose_epsilon(train, validation, size=5, threshold=0.6)
        self.assertEqual(f1, 1.0)
        self.assertGreater(log_epsilon, -9.9)
        self.assertLess(log_epsilon, -1.0)


class TestPipeline(unittest.TestCase):
    """Test scaled pipelines, persistence and the monitor."""

    def setUp(self):
        rng = np.random.default_rng(18)
        self.X = rng.normal(loc=[10.0, -3.0, 0.5, 100.0], scale=[1.0, 0.1, 0.01, 20.0], size=(200, 4))
        self.columns = ["s_0", "s_1", "d_0", "d_1"]

    def test_round_trip_every_kind(self):
        """Test that a saved and reloaded model scores identically."""
        queries = np.vstack([self.X[:10], [[20.0, -3.0, 0.5, 100.0]]])
        for kind in KINDS:
            with self.subTest(kind=kind):
                pipeline = DetectorPipeline.from_config(Config("config/nonexistent.yaml"), kind)
                pipeline.fit(self.X, columns=self.columns)
                with tempfile.TemporaryDirectory() as tmp:
                    loaded = DetectorPipeline.load(pipeline.save(Path(tmp) / f"{kind}.json"))
                np.testing.assert_allclose(loaded.scores(queries), pipeline.scores(queries), rtol=1e-12, atol=1e-12)
                self.assertEqual(loaded.columns, self.columns)
                self.assertEqual(loaded.fingerprint, pipeline.fingerprint)
                self.assertEqual(loaded.threshold, pipeline.threshold)
                self.assertTrue(pipeline.anomalies(queries)[-1])

    def test_gamma_recorded(self):
        """Test that the automatic kernel width is stored with the model."""
        pipeline = DetectorPipeline("ocsvm").fit(self.X)
        self.assertIsInstance(pipeline.params['gamma'], float)
        self.assertAlmostEqual(pipeline.params['gamma'], 0.25, places=9)

    def test_dimension_checks(self):
        """Test rejection of rows and columns that do not match the training set."""
        pipeline = DetectorPipeline("ocsvm").fit(self.X, columns=self.columns)
        with self.assertRaises(DimensionError):
            pipeline.scores(np.zeros((1, 3)))
        with self.assertRaises(DimensionError):
            pipeline.check_columns(["s_0", "s_1", "d_0"])
        with self.assertRaises(DimensionError):
            DetectorPipeline("ocsvm").fit(self.X, columns=["s_0"])
        with self.assertRaises(TrainingError):
            DetectorPipeline("lof").scores(self.X)
        with self.assertRaises(ValueError):
            DetectorPipeline("lstm")

    def test_gaussian_validation_tuning(self):
        """Test that validation captures move epsilon below the benign scores."""
        far = self.X[:30] + np.array([8.0, 0.8, 0.08, 160.0])
        pipeline = DetectorPipeline("iga").fit(self.X, validation=[(self.X[:30], 0), (far, 1)], window=(5, 0.6))
        self.assertIsNone(first_alarm(pipeline.anomalies(self.X[:30]), 5, 0.6))
        self.assertIsNotNone(first_alarm(pipeline.anomalies(far), 5, 0.6))

    def test_monitor_stream(self):
        """Test per-sample records and the first attack time."""
        pipeline = DetectorPipeline("ocsvm").fit(self.X, columns=self.columns)
        monitor = Monitor(pipeline, size=5, threshold=0.6)
        centre, far = self.X.mean(axis=0), self.X.mean(axis=0) + np.array([10.0, 1.0, 0.1, 200.0])
        for t in range(40):
            record = monitor.push(float(t), centre if t < 20 else far)
            if t < 4:
                self.assertIs(record.verdict, WindowVerdict.WARMING_UP)
        self.assertEqual(monitor.first_attack, 22.0)
        self.assertTrue(monitor.detected)
        frame = monitor.log_frame()
        self.assertEqual(list(frame.columns), ["t", "score", "anomaly", "verdict"])
        self.assertEqual(len(frame), 40)
        self.assertEqual(frame["verdict"].iloc[-1], "attack")
        with tempfile.TemporaryDirectory() as tmp:
            self.assertTrue(monitor.save_log(Path(tmp) / "scores.csv").exists())
        monitor.reset()
        self.assertIsNone(monitor.first_attack)
        self.assertEqual(monitor.records, [])


if __name__ == '__main__':
    unittest.main()
