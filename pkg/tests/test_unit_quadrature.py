import math

import numpy as np
import pytest

from src.errors import DomainError, GridTooLargeError
from src.schemas import ParamDomain
from src.services.quadrature import (
    cc_nodes,
    cc_weights,
    lagrange_basis,
    level_to_nodes,
    midpoint_lattice,
    tensor_interpolate,
    tensor_rule,
)


@pytest.mark.parametrize("level, nodes", [(0, 0), (1, 1), (2, 3), (3, 5), (4, 9)])
def test_level_to_nodes(level, nodes):
    assert level_to_nodes(level) == nodes


def test_cc_nodes():
    assert cc_nodes(1) == [0.0]
    assert cc_nodes(3) == [1.0, 0.0, -1.0]
    np.testing.assert_allclose(cc_nodes(5), [1.0, math.sqrt(2) / 2, 0.0, -math.sqrt(2) / 2, -1.0], atol=1e-15)


def test_cc_nodes_are_nested_bit_for_bit():
    for level in range(2, 9):
        coarse, fine = cc_nodes(level_to_nodes(level)), cc_nodes(level_to_nodes(level + 1))
        assert set(coarse) <= set(fine)
        assert fine[::2] == coarse


def test_cc_weights_small_rules():
    assert cc_weights(1) == [1.0]
    np.testing.assert_allclose(cc_weights(3), [1 / 6, 4 / 6, 1 / 6], rtol=0, atol=1e-15)


@pytest.mark.parametrize("K", [2, 3, 5, 9, 17, 33])
def test_cc_polynomial_exactness(K):
    nodes, weights = np.array(cc_nodes(K)), np.array(cc_weights(K))
    assert abs(weights.sum() - 1.0) < 1e-14
    for degree in range(K):
        exact = 0.0 if degree % 2 else 1.0 / (degree + 1)
        assert abs(np.dot(weights, nodes ** degree) - exact) < 1e-12


def test_simpson_like_rule_integrates_square():
    nodes, weights = np.array(cc_nodes(3)), np.array(cc_weights(3))
    assert abs(np.dot(weights, nodes ** 2) - 1 / 3) < 1e-15


def test_tensor_rule_root_is_center(unit_square):
    rule = tensor_rule((1, 1), unit_square)
    np.testing.assert_array_equal(rule.points, [[0.5, 0.5]])
    np.testing.assert_array_equal(rule.weights, [1.0])


def test_tensor_rule_midline(unit_square):
    rule = tensor_rule((2, 1), unit_square)
    assert rule.points.shape == (3, 2)
    np.testing.assert_array_equal(rule.points[:, 1], [0.5, 0.5, 0.5])
    np.testing.assert_array_equal(sorted(rule.points[:, 0]), [0.0, 0.5, 1.0])


def test_tensor_rules_are_nested(default_model):
    dom = default_model.domain
    fine = {tuple(p) for p in tensor_rule((3, 4), dom).points}
    for beta in [(1, 1), (2, 1), (2, 2), (3, 3), (1, 4)]:
        assert {tuple(p) for p in tensor_rule(beta, dom).points} <= fine


def test_tensor_weights_are_normalized(default_model):
    for beta in [(1, 1), (3, 2), (5, 5), (8, 3)]:
        rule = tensor_rule(beta, default_model.domain)
        assert len(rule.points) == math.prod(level_to_nodes(b) for b in beta)
        assert abs(rule.weights.sum() - 1.0) < 1e-14


def test_tensor_rule_point_cap(unit_square):
    with pytest.raises(GridTooLargeError):
        tensor_rule((6, 6), unit_square, max_points=100)


def test_tensor_interpolate_constant(unit_square):
    rule = tensor_rule((3, 2), unit_square)
    values = np.full(len(rule.points), 2.5)
    assert tensor_interpolate((3, 2), values, [0.31, 0.77], unit_square) == pytest.approx(2.5, abs=1e-14)


def test_tensor_interpolate_bilinear(unit_square):
    rule = tensor_rule((2, 2), unit_square)
    f = lambda p: 1.0 + 2.0 * p[..., 0] - p[..., 1] + 3.0 * p[..., 0] * p[..., 1]
    y = np.random.default_rng(0).random((50, 2))
    np.testing.assert_allclose(tensor_interpolate((2, 2), f(rule.points), y, unit_square), f(y), atol=1e-12)


def test_tensor_interpolate_returns_grid_values(default_model):
    dom = default_model.domain
    rule = tensor_rule((3, 3), dom)
    values = np.sin(np.arange(len(rule.points)))
    np.testing.assert_allclose(tensor_interpolate((3, 3), values, rule.points, dom), values, atol=1e-13)


def test_tensor_interpolate_reproduces_tensor_polynomials(reference_square):
    beta = (3, 4)
    degrees = [level_to_nodes(b) - 1 for b in beta]
    f = lambda p: (p[..., 0] ** degrees[0] - 0.5 * p[..., 0]) * (1.0 + p[..., 1] ** degrees[1])
    rule = tensor_rule(beta, reference_square)
    y = np.random.default_rng(1).uniform(-1.0, 1.0, (100, 2))
    np.testing.assert_allclose(tensor_interpolate(beta, f(rule.points), y, reference_square), f(y), atol=1e-10)


def test_tensor_interpolate_rejects_points_outside(unit_square):
    rule = tensor_rule((2, 2), unit_square)
    with pytest.raises(DomainError):
        tensor_interpolate((2, 2), np.zeros(len(rule.points)), [1.5, 0.5], unit_square)


def test_lagrange_basis_partition_of_unity():
    basis = lagrange_basis(9, np.linspace(-1.0, 1.0, 37))
    np.testing.assert_allclose(basis.sum(axis=1), 1.0, atol=1e-13)


def test_midpoint_lattice_linear_mean_is_exact(unit_square):
    points = midpoint_lattice(unit_square, 100)
    assert points.shape == (10_000, 2)
    assert abs(points[:, 0].mean() - 0.5) < 1e-12


def test_midpoint_lattice_cap():
    dom = ParamDomain(lower=(0.0,) * 4, upper=(1.0,) * 4)
    with pytest.raises(GridTooLargeError, match="sparse"):
        midpoint_lattice(dom, 100, max_points=1_000_000)
