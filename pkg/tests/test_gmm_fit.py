#!/usr/bin/env python3
"""
Tests for EM fitting of fixation points
"""

import math
import unittest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from src.saliency_gmm.config import CovarianceMode, EmConfig
from src.saliency_gmm.core import FixationPoints, GmmParams, TooFewPoints, validate_gmm
from src.saliency_gmm.gmm_fit import (
    GmmFitter,
    constrain_covariances,
    fit_gmm,
    kmeans_plusplus,
    log_likelihood,
    responsibilities,
)

CENTERS = np.array([[100.0, 100.0], [400.0, 300.0]])


def two_clusters(seed: int, per_cluster: int = 100, std: float = 10.0) -> FixationPoints:
    rng = np.random.default_rng(seed)
    samples = np.concatenate([rng.normal(center, std, (per_cluster, 2)) for center in CENTERS])
    return FixationPoints(points=samples, canvas_width=640, canvas_height=480)


class TestFitGmm(unittest.TestCase):
    """Test fit_gmm on instances with known answers"""

    def test_single_gaussian_matches_sample_statistics(self):
        """Test C=1 recovers the sample mean and population variance"""
        rng = np.random.default_rng(0)
        samples = rng.normal([320.0, 240.0], 20.0, (200, 2))
        points = FixationPoints(points=samples, canvas_width=640, canvas_height=480)
        gmm = fit_gmm(points, 1, CovarianceMode.DIAGONAL)

        comp = gmm.components[0]
        np.testing.assert_allclose(comp.mean, samples.mean(axis=0), atol=1e-8)
        np.testing.assert_allclose(comp.cov[:2], samples.var(axis=0), rtol=1e-8)
        self.assertEqual(comp.cov[2], 0.0)
        self.assertLess(np.max(np.abs(np.array(comp.mean) - [320.0, 240.0])), 5.0)
        for var in comp.cov[:2]:
            self.assertLess(abs(var - 400.0) / 400.0, 0.15)

    def test_repeated_point(self):
        """Test zero spread is clamped to min_var"""
        points = FixationPoints(points=[(100.0, 100.0)] * 50, canvas_width=640, canvas_height=480)
        gmm = fit_gmm(points, 1, CovarianceMode.DIAGONAL, EmConfig(min_var=1.0))
        self.assertEqual(gmm.components[0].mean, (100.0, 100.0))
        self.assertEqual(gmm.components[0].cov, (1.0, 1.0, 0.0))

    def test_degenerate_input_with_many_components(self):
        """Test identical points with C > 1 yield one effective component"""
        points = FixationPoints(points=[(10.0, 20.0)] * 12, canvas_width=64, canvas_height=64)
        gmm = fit_gmm(points, 3, CovarianceMode.FULL)
        self.assertEqual(validate_gmm(gmm), [])
        self.assertAlmostEqual(gmm.weights[0], 1.0 - 2e-6, places=12)
        np.testing.assert_allclose(gmm.weights[1:], 1e-6)

    def test_too_few_points(self):
        """Test TooFewPoints"""
        points = FixationPoints(points=[(1.0, 1.0), (2.0, 2.0)], canvas_width=8, canvas_height=8)
        with self.assertRaises(TooFewPoints):
            fit_gmm(points, 3)

    def test_two_clusters_spherical(self):
        """Test recovery of two well-separated clusters"""
        gmm = fit_gmm(two_clusters(1), 2, CovarianceMode.SPHERICAL)
        order = np.argsort(gmm.means[:, 0])
        np.testing.assert_allclose(gmm.means[order], CENTERS, atol=5.0)
        np.testing.assert_allclose(gmm.weights, [0.5, 0.5], atol=0.05)
        np.testing.assert_array_equal(gmm.covs[:, 0], gmm.covs[:, 1])
        np.testing.assert_array_equal(gmm.covs[:, 2], 0.0)

    def test_recovery_over_many_instances(self):
        """Test means within 5 px, weights within 0.05 and EM monotonicity on 100 seeds"""
        for seed in range(100):
            with self.subTest(seed=seed):
                points = two_clusters(seed)
                fitter = GmmFitter(2, CovarianceMode.DIAGONAL, EmConfig(seed=seed))
                gmm = fitter.fit(points)
                order = np.argsort(gmm.means[:, 0])
                self.assertLess(np.max(np.abs(gmm.means[order] - CENTERS)), 5.0)
                self.assertLess(np.max(np.abs(gmm.weights - 0.5)), 0.05)
                for restart in fitter.restarts_:
                    history = np.array(restart.history)
                    slack = 1e-9 * np.maximum(1.0, np.abs(history[:-1]))
                    self.assertTrue(np.all(np.diff(history) >= -slack))

    def test_mode_constraints_and_floor(self):
        """Test covariance structure and the variance floor on every mode"""
        rng = np.random.default_rng(5)
        points = FixationPoints(points=rng.uniform(0, 64, (80, 2)), canvas_width=64, canvas_height=64)
        for mode in CovarianceMode:
            with self.subTest(mode=mode):
                gmm = fit_gmm(points, 5, mode, EmConfig(min_var=4.0, seed=2))
                self.assertEqual(validate_gmm(gmm), [])
                covs = gmm.covs
                self.assertTrue(np.all(covs[:, :2] >= 4.0))
                if mode == CovarianceMode.SPHERICAL:
                    np.testing.assert_array_equal(covs[:, 0], covs[:, 1])
                if mode != CovarianceMode.FULL:
                    np.testing.assert_array_equal(covs[:, 2], 0.0)
                spread = 3.0 * np.sqrt(covs[:, :2].max())
                self.assertTrue(np.all(gmm.means > -spread))
                self.assertTrue(np.all(gmm.means < 64 + spread))

    def test_shuffle_invariance(self):
        """Test shuffled input reaches the same log-likelihood"""
        points = two_clusters(7)
        shuffled = FixationPoints(points=np.random.default_rng(0).permutation(points.points),
                                  canvas_width=640, canvas_height=480)
        cfg = EmConfig(tol=1e-12, max_iter=1000, n_init=4, seed=3)
        first = GmmFitter(2, CovarianceMode.FULL, cfg)
        second = GmmFitter(2, CovarianceMode.FULL, cfg)
        first.fit(points)
        second.fit(shuffled)
        self.assertLess(abs(first.best_.log_likelihood - second.best_.log_likelihood), 1e-6)

    def test_deterministic(self):
        """Test identical seeds give identical fits"""
        points = two_clusters(3)
        self.assertEqual(fit_gmm(points, 4, CovarianceMode.FULL, EmConfig(seed=9)),
                         fit_gmm(points, 4, CovarianceMode.FULL, EmConfig(seed=9)))


class TestResponsibilities(unittest.TestCase):
    """Test E-step posteriors"""

    def setUp(self):
        self.gmm = GmmParams.from_arrays([0.5, 0.5], [[100.0, 100.0], [1100.0, 100.0]],
                                         [[50.0, 50.0, 0.0], [50.0, 50.0, 0.0]], 1200, 200)

    def test_single_component(self):
        """Test C=1 gives all ones"""
        gmm = GmmParams.from_arrays([1.0], [[5.0, 5.0]], [[4.0, 4.0, 0.0]], 10, 10)
        points = FixationPoints(points=np.random.default_rng(0).uniform(0, 10, (7, 2)),
                                canvas_width=10, canvas_height=10)
        np.testing.assert_array_equal(responsibilities(points, gmm), 1.0)

    def test_dominant_component(self):
        """Test a point at one mean belongs to that component"""
        points = FixationPoints(points=[(100.0, 100.0)], canvas_width=1200, canvas_height=200)
        self.assertGreater(responsibilities(points, self.gmm)[0, 0], 0.999)

    def test_symmetry(self):
        """Test the midpoint splits evenly and rows sum to one"""
        points = FixationPoints(points=[(600.0, 100.0), (300.0, 50.0)], canvas_width=1200, canvas_height=200)
        resp = responsibilities(points, self.gmm)
        np.testing.assert_allclose(resp[0], [0.5, 0.5], atol=1e-9)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all((resp >= 0) & (resp <= 1)))


class TestLogLikelihood(unittest.TestCase):
    """Test mixture log-likelihood"""

    def test_closed_form(self):
        """Test a point at the mean of a unit-variance component"""
        gmm = GmmParams.from_arrays([1.0], [[5.0, 5.0]], [[1.0, 1.0, 0.0]], 10, 10)
        points = FixationPoints(points=[(5.0, 5.0)], canvas_width=10, canvas_height=10)
        self.assertAlmostEqual(log_likelihood(points, gmm), -math.log(2.0 * math.pi), places=12)

    def test_duplication_doubles(self):
        """Test additivity over points"""
        gmm = GmmParams.from_arrays([0.3, 0.7], [[20.0, 20.0], [40.0, 30.0]],
                                    [[30.0, 20.0, 5.0], [10.0, 10.0, 0.0]], 64, 64)
        rng = np.random.default_rng(4)
        base = rng.uniform(0, 64, (25, 2))
        once = FixationPoints(points=base, canvas_width=64, canvas_height=64)
        twice = FixationPoints(points=np.concatenate([base, base]), canvas_width=64, canvas_height=64)
        single = log_likelihood(once, gmm)
        self.assertAlmostEqual(log_likelihood(twice, gmm), 2.0 * single, delta=1e-12 * abs(single))


class TestHelpers(unittest.TestCase):
    """Test seeding and covariance projection"""

    def test_kmeans_plusplus_picks_data_points(self):
        """Test centers are rows of the input"""
        X = two_clusters(0).points
        centers = kmeans_plusplus(X, 2, np.random.default_rng(1))
        for center in centers:
            self.assertTrue(np.any(np.all(X == center, axis=1)))
        # D² sampling lands one center in each far-apart cluster
        self.assertNotEqual(int(centers[0, 0] > 250), int(centers[1, 0] > 250))

    def test_constrain_covariances(self):
        """Test projection onto each mode"""
        scatter = np.array([[4.0, 2.0, 5.0]])
        np.testing.assert_array_equal(constrain_covariances(scatter, CovarianceMode.SPHERICAL, 1.0), [[3.0, 3.0, 0.0]])
        np.testing.assert_array_equal(constrain_covariances(scatter, CovarianceMode.DIAGONAL, 3.0), [[4.0, 3.0, 0.0]])
        full = constrain_covariances(scatter, CovarianceMode.FULL, 1.0)
        self.assertLess(full[0, 2] ** 2, full[0, 0] * full[0, 1])


if __name__ == '__main__':
    unittest.main()
