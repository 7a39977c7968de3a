import math
import unittest

import numpy as np
import pytest

from src.schemas import OutputConfig, ParamDomain
from src.services.models import default_benchmark
from src.services.stats import evaluate_chunked, kernel_density, qoi_distribution, surrogate_moments

UNIT = ParamDomain(lower=(0.0, 0.0), upper=(1.0, 1.0))


def first_coordinate(y):
    return np.atleast_2d(y)[:, 0]


def integrate(pairs):
    x, density = np.array(pairs).T
    return float(np.sum(np.diff(x) * (density[1:] + density[:-1]) / 2.0))


def test_evaluate_chunked():
    points = np.random.default_rng(0).random((1000, 2))
    np.testing.assert_array_equal(evaluate_chunked(first_coordinate, points, chunk=64), points[:, 0])
    assert evaluate_chunked(first_coordinate, np.empty((0, 2))).shape == (0,)


def test_moments_of_constant():
    assert surrogate_moments(lambda y: np.full(len(y), 2.0), UNIT) == (2.0, 0.0)


def test_midpoint_moments_of_first_coordinate():
    mean, std = surrogate_moments(first_coordinate, UNIT)
    assert mean == pytest.approx(0.5, abs=1e-12)
    assert std == pytest.approx(math.sqrt(1.0 / 12.0), abs=1e-4)


def test_tensor_moments_of_first_coordinate():
    mean, std = surrogate_moments(first_coordinate, UNIT, method="tensor_cc")
    assert mean == pytest.approx(0.5, abs=1e-14)
    assert std == pytest.approx(math.sqrt(1.0 / 12.0), abs=1e-12)


def test_rules_agree_on_smooth_function(reference_square):
    truth = default_benchmark(noise_amp=0.0).truth
    midpoint = surrogate_moments(truth, reference_square)
    tensor = surrogate_moments(truth, reference_square, method="tensor_cc")
    assert tensor[0] == pytest.approx(math.sinh(1.0) * math.sin(1.0), abs=1e-10)
    assert midpoint == pytest.approx(tensor, abs=1e-3)


def test_unknown_method():
    with pytest.raises(ValueError):
        surrogate_moments(first_coordinate, UNIT, method="simpson")


class TestQoiDistribution(unittest.TestCase):

    def test_histogram_accounts_for_every_sample(self):
        summary = qoi_distribution(lambda y: 2.0 + first_coordinate(y), UNIT, n=2000, output=OutputConfig(bins=12))
        self.assertEqual(sum(summary.histogram_counts), 2000)
        self.assertEqual(len(summary.histogram_edges), 13)
        widths = np.diff(summary.histogram_edges)
        self.assertAlmostEqual(float(np.dot(widths, summary.histogram_density)), 1.0, delta=1e-12)
        self.assertEqual(summary.samples_used, 2000)

    def test_kde_integrates_to_one(self):
        summary = qoi_distribution(lambda y: 2.0 + first_coordinate(y), UNIT)
        self.assertTrue(summary.kde_log_transformed)
        self.assertAlmostEqual(integrate(summary.kde), 1.0, delta=1e-3)

    def test_uniform_density_in_the_interior(self):
        summary = qoi_distribution(first_coordinate, UNIT)
        x, density = np.array(summary.kde).T
        interior = (x > 0.3) & (x < 0.7)
        self.assertAlmostEqual(float(density[interior].mean()), 1.0, delta=0.05)
        np.testing.assert_allclose(density[interior], 1.0, atol=0.1)
        self.assertAlmostEqual(summary.mean, 0.5, delta=0.01)
        self.assertAlmostEqual(summary.std, math.sqrt(1.0 / 12.0), delta=0.01)

    def test_same_seed_same_summary(self):
        first = qoi_distribution(first_coordinate, UNIT, n=500, seed=4)
        second = qoi_distribution(first_coordinate, UNIT, n=500, seed=4)
        self.assertEqual(first, second)
        self.assertNotEqual(first, qoi_distribution(first_coordinate, UNIT, n=500, seed=5))

    def test_non_positive_values_warn(self):
        with self.assertLogs("src.services.stats", level="WARNING"):
            summary = qoi_distribution(lambda y: first_coordinate(y) - 0.5, UNIT, n=1000)
        self.assertFalse(summary.kde_log_transformed)
        self.assertAlmostEqual(integrate(summary.kde), 1.0, delta=1e-3)

    def test_constant_surrogate(self):
        summary = qoi_distribution(lambda y: np.full(len(y), 1.5), UNIT, n=100)
        self.assertEqual(summary.histogram_counts, [100])
        self.assertEqual(summary.mean, 1.5)
        self.assertEqual(summary.std, 0.0)
        x, density = np.array(summary.kde).T
        self.assertAlmostEqual(x[int(np.argmax(density))], 1.5, delta=1e-3)


def test_kernel_density_of_log_normal_sample():
    values = np.exp(np.random.default_rng(1).normal(0.0, 0.25, 5000))
    pairs, log_transformed = kernel_density(values, 256)
    assert log_transformed
    assert len(pairs) == 256
    assert min(x for x, _ in pairs) > 0.0
    assert integrate(pairs) == pytest.approx(1.0, abs=1e-3)
