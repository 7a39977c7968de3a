"""
Statistical post-processing of surrogates: moments, histogram and kernel density estimate.
"""
import logging
from typing import Callable, Literal

import numpy as np
from scipy.stats import gaussian_kde, norm

from src.schemas import OutputConfig, ParamDomain, QoiSummary
from src.services.quadrature import midpoint_lattice, tensor_rule

logger = logging.getLogger(__name__)

SurrogateEval = Callable[[np.ndarray], np.ndarray]

CHUNK = 4096


def evaluate_chunked(surrogate_eval: SurrogateEval, points: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
    """
    Evaluate a vectorized surrogate on many points, ``chunk`` rows at a time.
    """
    parts = [np.asarray(surrogate_eval(points[start:start + chunk]), dtype=float).reshape(-1)
             for start in range(0, len(points), chunk)]
    return np.concatenate(parts) if parts else np.empty(0)


def surrogate_moments(surrogate_eval: SurrogateEval, dom: ParamDomain,
                      method: Literal["midpoint100", "tensor_cc"] = "midpoint100",
                      per_dim: int = 100, beta: tuple[int, ...] | None = None) -> tuple[float, float]:
    """
    Mean and standard deviation of a surrogate under the uniform density of the box.

    :param surrogate_eval: Vectorized surrogate, shape (P, N) -> (P,).
    :type surrogate_eval: Callable
    :param dom: Parameter box.
    :type dom: ParamDomain
    :param method: ``midpoint100`` for the full-factorial midpoint rule with ``per_dim`` cells
        per direction, ``tensor_cc`` for a tensor Clenshaw-Curtis rule of level ``beta``
        (default 6 in every direction).
    :type method: str
    :return: Mean and standard deviation.
    :rtype: tuple[float, float]
    """
    if method == "midpoint100":
        points = midpoint_lattice(dom, per_dim)
        values = evaluate_chunked(surrogate_eval, points)
        mean = float(np.mean(values))
        return mean, float(np.sqrt(np.mean((values - mean) ** 2)))
    if method == "tensor_cc":
        rule = tensor_rule(beta if beta is not None else (6,) * dom.n_params, dom)
        values = evaluate_chunked(surrogate_eval, rule.points)
        mean = float(np.dot(rule.weights, values))
        return mean, float(np.sqrt(max(np.dot(rule.weights, (values - mean) ** 2), 0.0)))
    raise ValueError(f"unknown quadrature method {method!r}")


def _narrow_bump(center: float, points: int) -> list[tuple[float, float]]:
    width = 1e-3 * max(abs(center), 1.0)
    x = np.linspace(center - 5.0 * width, center + 5.0 * width, points)
    return list(zip(x.tolist(), norm.pdf(x, loc=center, scale=width).tolist()))


def kernel_density(values: np.ndarray, points: int = 512) -> tuple[list[tuple[float, float]], bool]:
    """
    Gaussian KDE with Silverman bandwidth, on log values when all values are positive.

    :return: (abscissa, density) pairs and whether the log transform was applied.
    :rtype: tuple[list, bool]
    """
    if np.ptp(values) == 0.0:
        return _narrow_bump(float(values[0]), points), False
    log_transformed = bool(np.all(values > 0.0))
    if not log_transformed:
        logger.warning("non-positive quantity of interest values; KDE without positive support")
    data = np.log(values) if log_transformed else values
    kde = gaussian_kde(data, bw_method="silverman")
    h = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(data.min() - 5.0 * h, data.max() + 5.0 * h, points)
    density = kde(grid)
    if log_transformed:
        x = np.exp(grid)
        density = density / x
    else:
        x = grid
    return list(zip(x.tolist(), density.tolist())), log_transformed


def qoi_distribution(surrogate_eval: SurrogateEval, dom: ParamDomain, n: int = 10_000, seed: int = 0,
                     output: OutputConfig | None = None) -> QoiSummary:
    """
    Push ``n`` seeded uniform samples of the box through the surrogate and summarize them.

    :param surrogate_eval: Vectorized surrogate, shape (P, N) -> (P,).
    :type surrogate_eval: Callable
    :param dom: Parameter box.
    :type dom: ParamDomain
    :param n: Sample count.
    :type n: int
    :param seed: Seed of the sampler.
    :type seed: int
    :param output: Histogram bins and KDE resolution.
    :type output: OutputConfig | None
    :return: Moments, histogram and density estimate.
    :rtype: QoiSummary
    """
    output = output or OutputConfig()
    rng = np.random.default_rng(seed)
    samples = dom.from_unit(rng.random((n, dom.n_params)))
    values = evaluate_chunked(surrogate_eval, samples)
    constant = np.ptp(values) == 0.0
    counts, edges = np.histogram(values, bins=1 if constant else output.bins)
    density = counts / (n * np.diff(edges))
    kde, log_transformed = kernel_density(values, output.kde_points)
    return QoiSummary(
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        samples_used=n,
        histogram_edges=edges.tolist(),
        histogram_counts=[int(c) for c in counts],
        histogram_density=density.tolist(),
        kde=kde,
        kde_log_transformed=log_transformed,
    )
