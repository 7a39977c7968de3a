"""
Nested Clenshaw-Curtis rules, the level function and their tensorization on the parameter box.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from src.conf.config import settings
from src.errors import DomainError, GridTooLargeError
from src.schemas import ParamDomain


def level_to_nodes(i: int) -> int:
    """
    Number of univariate nodes at level ``i``: m(0)=0, m(1)=1, m(i)=2^(i-1)+1.

    :param i: Non-negative level.
    :type i: int
    :return: Node count.
    :rtype: int
    """
    if i < 0:
        raise ValueError(f"level must be non-negative, got {i}")
    if i <= 1:
        return i
    return 2 ** (i - 1) + 1


@lru_cache(maxsize=None)
def _cc_nodes(K: int) -> tuple[float, ...]:
    if K == 1:
        return (0.0,)
    nodes = []
    for j in range(K):
        # sin form of cos(j*pi/(K-1)); the reduced fraction makes shared nodes bit-identical across levels
        frac = Fraction(K - 1 - 2 * j, 2 * (K - 1))
        nodes.append(math.sin(math.pi * frac.numerator / frac.denominator))
    return tuple(nodes)


def cc_nodes(K: int) -> list[float]:
    """
    Clenshaw-Curtis nodes on [-1, 1], ordered from 1 down to -1.

    A single node sits at the interval center.
    """
    if K < 1:
        raise ValueError(f"node count must be positive, got {K}")
    return list(_cc_nodes(K))


@lru_cache(maxsize=None)
def _cc_weights(K: int) -> tuple[float, ...]:
    if K == 1:
        return (1.0,)
    n = K - 1
    weights = []
    for j in range(K):
        theta = j * math.pi / n
        acc = 1.0
        for k in range(1, n // 2 + 1):
            b = 1.0 if 2 * k == n else 2.0
            acc -= b / (4 * k * k - 1) * math.cos(2 * k * theta)
        c = 1.0 if j in (0, n) else 2.0
        weights.append(c / n * acc)
    total = math.fsum(weights)
    return tuple(w / total for w in weights)


def cc_weights(K: int) -> list[float]:
    """
    Clenshaw-Curtis weights normalized to the uniform probability density on [-1, 1].

    Direct cosine-sum formula; the weights sum to one and integrate polynomials of
    degree up to K-1 exactly.
    """
    if K < 1:
        raise ValueError(f"node count must be positive, got {K}")
    return list(_cc_weights(K))


def _barycentric_weights(K: int) -> np.ndarray:
    lam = np.array([(-1.0) ** j for j in range(K)])
    lam[0] *= 0.5
    lam[-1] *= 0.5
    return lam


def lagrange_basis(K: int, t) -> np.ndarray:
    """
    Values of the K Lagrange polynomials through the CC nodes at reference points ``t``.

    :param K: Node count.
    :type K: int
    :param t: Reference coordinates in [-1, 1], shape (P,).
    :type t: array-like
    :return: Basis matrix of shape (P, K).
    :rtype: np.ndarray
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if K == 1:
        return np.ones((t.size, 1))
    nodes = np.array(_cc_nodes(K))
    diff = t[:, None] - nodes[None, :]
    exact = np.abs(diff) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = _barycentric_weights(K) / diff
        basis = terms / terms.sum(axis=1, keepdims=True)
    hits = exact.any(axis=1)
    if hits.any():
        first = np.argmax(exact[hits], axis=1)
        basis[hits] = 0.0
        basis[np.flatnonzero(hits), first] = 1.0
    return basis


@dataclass(frozen=True)
class TensorQuadRule:
    """
    Cartesian CC grid on the parameter box.

    :param beta: Parametric multi-index.
    :type beta: tuple[int, ...]
    :param points: Grid points in native units, shape (P, N), first direction slowest.
    :type points: np.ndarray
    :param weights: Probability weights, shape (P,).
    :type weights: np.ndarray
    """
    beta: tuple[int, ...]
    points: np.ndarray
    weights: np.ndarray


def _mapped_nodes(K: int, lo: float, hi: float) -> list[float]:
    return [lo + (t + 1.0) * 0.5 * (hi - lo) for t in _cc_nodes(K)]


def tensor_rule(beta, dom: ParamDomain, max_points: int | None = None) -> TensorQuadRule:
    """
    Tensor product of univariate CC rules with m(beta_n) nodes per direction.

    :param beta: Parametric multi-index of length N, components at least 1.
    :type beta: tuple[int, ...]
    :param dom: Parameter box.
    :type dom: ParamDomain
    :param max_points: Point cap, defaults to ``settings.max_tensor_points``.
    :type max_points: int | None
    :return: The tensor rule.
    :rtype: TensorQuadRule
    """
    beta = tuple(int(b) for b in beta)
    if len(beta) != dom.n_params or any(b < 1 for b in beta):
        raise ValueError(f"beta {beta} is not a valid level vector for {dom.n_params} parameters")
    cap = max_points if max_points is not None else settings.max_tensor_points
    sizes = [level_to_nodes(b) for b in beta]
    total = math.prod(sizes)
    if total > cap:
        raise GridTooLargeError(f"tensor grid {beta} has {total} points, cap is {cap}")
    axes = [_mapped_nodes(K, lo, hi) for K, lo, hi in zip(sizes, dom.lower, dom.upper)]
    points = np.array(list(product(*axes)), dtype=float).reshape(total, len(beta))
    weights = np.array([math.prod(w) for w in product(*(_cc_weights(K) for K in sizes))])
    return TensorQuadRule(beta=beta, points=points, weights=weights)


def tensor_interpolate(beta, values, y, dom: ParamDomain) -> np.ndarray | float:
    """
    Tensor-product Lagrange interpolant through the CC grid of ``beta``.

    :param beta: Parametric multi-index.
    :type beta: tuple[int, ...]
    :param values: Values aligned with ``tensor_rule(beta, dom).points``.
    :type values: array-like
    :param y: One point of shape (N,) or a batch of shape (P, N).
    :type y: array-like
    :param dom: Parameter box.
    :type dom: ParamDomain
    :return: Interpolated value(s); a float for a single point.
    :rtype: float | np.ndarray
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    if not np.all(dom.contains(pts)):
        raise DomainError("interpolation point outside the parameter box")
    sizes = [level_to_nodes(b) for b in beta]
    t = np.clip(2.0 * dom.to_unit(pts) - 1.0, -1.0, 1.0)
    out = np.asarray(values, dtype=float).reshape(sizes)
    out = np.einsum("pa,a...->p...", lagrange_basis(sizes[0], t[:, 0]), out)
    for n in range(1, len(sizes)):
        out = np.einsum("pa,pa...->p...", lagrange_basis(sizes[n], t[:, n]), out)
    return float(out[0]) if single else out


def midpoint_lattice(dom: ParamDomain, per_dim: int, max_points: int | None = None) -> np.ndarray:
    """
    Cell centers of the full-factorial lattice with ``per_dim`` cells per direction.

    :raises GridTooLargeError: when per_dim ** N exceeds the cap; a sparse rule is the way out then.
    """
    cap = max_points if max_points is not None else settings.max_midpoint_points
    total = per_dim ** dom.n_params
    if total > cap:
        raise GridTooLargeError(
            f"midpoint lattice needs {total} points (cap {cap}); use a sparse quadrature rule instead")
    centers = (np.arange(per_dim) + 0.5) / per_dim
    grids = np.meshgrid(*([centers] * dom.n_params), indexing="ij")
    unit_points = np.stack([g.ravel() for g in grids], axis=-1)
    return dom.from_unit(unit_points)
