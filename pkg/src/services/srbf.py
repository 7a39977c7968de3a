"""
Stochastic radial basis function surrogates and the adaptive multi-fidelity infill loop.

Surrogates work on parameters normalized to the unit hypercube. The kernel exponent tau is
sampled on Theta equal strata of [tau_min, tau_max]; the prediction is the mean over the
strata and the uncertainty is the width of the central 95% band.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from src.errors import ConfigError, OptimizationError, StructuralError
from src.schemas import EvalRecord, InfillPoint, ParamDomain, PsoConfig, SrbfConfig, SrbfIterationLog
from src.services.models import ModelHarness
from src.services.optimize import full_factorial_scan, pso_maximize
from src.services.stats import surrogate_moments

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-12
# relative singular-value cutoff of the least-squares fits
RCOND = 1e-10
# keeps the (points x tau x centers) kernel block near 4M entries
BLOCK = 4_000_000


def tau_samples(tau_min: float, tau_max: float, theta: int) -> np.ndarray:
    """
    Midpoints of ``theta`` equal strata of [tau_min, tau_max].
    """
    return tau_min + (tau_max - tau_min) * (np.arange(theta) + 0.5) / theta


def collapse_duplicates(centers: np.ndarray, tol: float = DUPLICATE_TOL) -> np.ndarray:
    """
    Drop centers closer than ``tol`` to an earlier one.
    """
    keep = []
    for j, c in enumerate(centers):
        if all(np.linalg.norm(c - centers[i]) >= tol for i in keep):
            keep.append(j)
    return centers[keep]


def _kernel(points: np.ndarray, centers: np.ndarray, taus: np.ndarray) -> np.ndarray:
    dist = cdist(points, centers)
    if len(taus) > 2 and np.allclose(np.diff(taus), taus[1] - taus[0], rtol=0.0, atol=1e-12):
        # evenly spaced exponents: d^tau_i = d^tau_0 * (d^step)^i
        out = np.empty((len(taus),) + dist.shape)
        out[0] = dist ** taus[0]
        out[1:] = dist ** (taus[1] - taus[0])
        return np.cumprod(out, axis=0, out=out)
    return dist[None, :, :] ** taus[:, None, None]


def _truncated_lstsq(A: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, int]:
    """
    Least-squares solutions of a stack of systems ``A[t] w = rhs``, dropping singular values
    below ``RCOND`` times the largest one. Returns the weights and the number of truncated systems.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > RCOND * s[:, :1]
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    coef = np.einsum("tjr,j->tr", U, rhs) * inv
    return np.einsum("trm,tr->tm", Vt, coef), int(np.count_nonzero(~keep.all(axis=1)))


def rbf_fit(points, values, centers, tau, constant_tail: bool = False) -> np.ndarray:
    """
    Weights of the expansion ``f(y) = sum_j w_j ||y - c_j||^tau`` (plus a constant when
    ``constant_tail`` is set, stored as the last weight).

    With as many centers as points the square system is solved exactly; otherwise the
    least-squares solution is returned, truncated at singular values below ``RCOND`` of the
    largest. A singular square system falls back to the truncated solution with a warning.

    :param points: Training points, shape (J, N).
    :type points: array-like
    :param values: Training values, shape (J,).
    :type values: array-like
    :param centers: Distinct centers, shape (K, N), K <= J.
    :type centers: array-like
    :param tau: One exponent or an array of exponents.
    :type tau: float | np.ndarray
    :param constant_tail: Augment the expansion with a constant term.
    :type constant_tail: bool
    :return: Weights of shape (K,) or (K+1,) for a scalar ``tau``; (T, K[+1]) for T exponents.
    :rtype: np.ndarray
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    values = np.asarray(values, dtype=float).reshape(-1)
    scalar = np.ndim(tau) == 0
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    J, K = len(points), len(centers)
    if K > J:
        raise ValueError(f"{K} centers for {J} training points")
    A = _kernel(points, centers, taus)
    square = K == J
    if constant_tail:
        ones = np.ones((len(taus), J, 1))
        if square:
            bottom = np.concatenate([np.ones((len(taus), 1, K)), np.zeros((len(taus), 1, 1))], axis=2)
            A = np.concatenate([np.concatenate([A, ones], axis=2), bottom], axis=1)
            rhs = np.concatenate([values, [0.0]])
        else:
            A = np.concatenate([A, ones], axis=2)
            rhs = values
    else:
        rhs = values
    if square:
        try:
            weights = np.linalg.solve(A, np.broadcast_to(rhs, (len(taus), len(rhs)))[..., None])[..., 0]
            return weights[0] if scalar else weights
        except np.linalg.LinAlgError:
            logger.warning("singular RBF system with %d centers; using the truncated least-squares solution", K)
    weights, truncated = _truncated_lstsq(A, rhs)
    if truncated:
        logger.warning("rank-deficient RBF system for %d of %d exponents", truncated, len(taus))
    return weights[0] if scalar else weights


def kmeans_centers(points, K: int) -> np.ndarray:
    """
    Lloyd k-means centroids from a greedy farthest-point start.

    The first seed is the point nearest to the mean; each next seed is the point farthest from
    the seeds chosen so far. Ties go to the lowest index, so the result depends only on the
    points and K.

    :param points: Points, shape (J, N).
    :type points: array-like
    :param K: Number of centers, 1 <= K <= J.
    :type K: int
    :return: Centers, shape (K, N).
    :rtype: np.ndarray
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    J = len(points)
    if not 1 <= K <= J:
        raise ValueError(f"cannot place {K} centers on {J} points")
    if K == J:
        return points.copy()
    if K == 1:
        return points.mean(axis=0, keepdims=True)
    chosen = [int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))]
    nearest = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(K - 1):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.linalg.norm(points - points[nxt], axis=1))
    km = KMeans(n_clusters=K, init=points[chosen], n_init=1, max_iter=100, tol=0.0, algorithm="lloyd")
    return km.fit(points).cluster_centers_


@dataclass(frozen=True)
class SrbfSurrogate:
    """
    Snapshot of a stochastic RBF fit on unit-cube coordinates.

    :param centers: Centers, shape (K, N).
    :param taus: Kernel exponents, shape (Theta,).
    :param weights: One weight row per exponent, shape (Theta, K) or (Theta, K+1) with a tail.
    :param mode: ``interpolation`` when the centers are the training points.
    :param k_star: Requested number of centers.
    """
    centers: np.ndarray
    taus: np.ndarray
    weights: np.ndarray
    mode: Literal["interpolation", "regression"]
    k_star: int
    constant_tail: bool = False

    def tau_predictions(self, unit_points) -> np.ndarray:
        """
        f(y, tau_i) for every point and exponent, shape (P, Theta).
        """
        unit_points = np.atleast_2d(np.asarray(unit_points, dtype=float))
        K, T = len(self.centers), len(self.taus)
        w = self.weights[:, :K]
        out = np.empty((len(unit_points), T))
        step = max(1, BLOCK // max(K * T, 1))
        for start in range(0, len(unit_points), step):
            block = _kernel(unit_points[start:start + step], self.centers, self.taus)
            out[start:start + step] = np.einsum("tpk,tk->pt", block, w)
        if self.constant_tail:
            out += self.weights[:, K][None, :]
        return out


def build_surrogate(unit_points, values, K: int, taus: np.ndarray, constant_tail: bool = True) -> SrbfSurrogate:
    """
    Fit a stochastic RBF with K centers: interpolation when K reaches the point count,
    k-means regression otherwise.
    """
    unit_points = np.atleast_2d(np.asarray(unit_points, dtype=float))
    J = len(unit_points)
    if K >= J:
        centers = collapse_duplicates(unit_points)
        mode = "interpolation"
    else:
        centers = collapse_duplicates(kmeans_centers(unit_points, K))
        mode = "regression"
    if mode == "interpolation" and len(centers) < J:
        logger.warning("duplicate training points collapsed; fitting %d centers by least squares", len(centers))
    weights = rbf_fit(unit_points, values, centers, taus, constant_tail=constant_tail)
    return SrbfSurrogate(centers=centers, taus=np.asarray(taus, dtype=float), weights=np.atleast_2d(weights),
                         mode=mode, k_star=min(K, J), constant_tail=constant_tail)


def _single(y, result: np.ndarray):
    return float(result[0]) if np.ndim(y) == 1 else result


def srbf_predict(s: SrbfSurrogate, y, dom: ParamDomain | None = None):
    """
    Mean over the tau strata of the RBF predictions.

    :param s: The surrogate.
    :type s: SrbfSurrogate
    :param y: Point (N,) or batch (P, N); in native units when ``dom`` is given, unit-cube otherwise.
    :type y: array-like
    :param dom: Parameter box used to normalize ``y``.
    :type dom: ParamDomain | None
    :return: Prediction(s).
    :rtype: float | np.ndarray
    """
    unit = dom.to_unit(y) if dom is not None else np.asarray(y, dtype=float)
    return _single(y, s.tau_predictions(unit).mean(axis=1))


def _order_index(p: float, theta: int) -> int:
    # ceil(p * theta)-th order statistic, 1-based
    return min(max(math.ceil(round(p * theta, 9)) - 1, 0), theta - 1)


def band_width(predictions: np.ndarray) -> np.ndarray:
    """
    q(0.975) - q(0.025) of the empirical distribution of each row.
    """
    theta = predictions.shape[1]
    lo, hi = _order_index(0.025, theta), _order_index(0.975, theta)
    ordered = np.partition(predictions, sorted({lo, hi}), axis=1)
    return np.maximum(ordered[:, hi] - ordered[:, lo], 0.0)


def srbf_uncertainty(s: SrbfSurrogate, y, dom: ParamDomain | None = None):
    """
    Width of the 95% band of the tau-predictions at ``y``; zero for a single stratum.
    """
    unit = dom.to_unit(y) if dom is not None else np.asarray(y, dtype=float)
    return _single(y, band_width(s.tau_predictions(unit)))


def loocv_rmse(unit_points, values, K: int, taus: np.ndarray, constant_tail: bool = True) -> float:
    """
    Leave-one-out root mean square error of K-center surrogates (K capped at J-1).
    """
    unit_points = np.atleast_2d(np.asarray(unit_points, dtype=float))
    values = np.asarray(values, dtype=float)
    J = len(unit_points)
    errors = np.empty(J)
    for i in range(J):
        mask = np.arange(J) != i
        reduced = build_surrogate(unit_points[mask], values[mask], min(K, J - 1), taus, constant_tail)
        errors[i] = reduced.tau_predictions(unit_points[i:i + 1]).mean() - values[i]
    return float(np.sqrt(np.mean(errors ** 2)))


def candidate_range(lo: int, hi: int, max_count: int) -> list[int]:
    """
    Integers of [lo, hi], thinned to ``max_count`` evenly spaced values (ends kept).
    """
    if hi - lo + 1 <= max_count:
        return list(range(lo, hi + 1))
    return sorted({int(round(k)) for k in np.linspace(lo, hi, max_count)})


def loocv_select_K(unit_points, values, candidates: Sequence[int], taus: np.ndarray,
                   constant_tail: bool = True) -> tuple[int, dict[int, float]]:
    """
    Number of centers minimizing the leave-one-out RMSE over ``candidates``.

    :param unit_points: Training points in the unit cube, shape (J, N), J >= 2.
    :type unit_points: array-like
    :param values: Training values, shape (J,).
    :type values: array-like
    :param candidates: Candidate center counts.
    :type candidates: Sequence[int]
    :param taus: Exponents of the leave-one-out surrogates.
    :type taus: np.ndarray
    :return: The minimizer (smallest on ties) and the RMSE curve.
    :rtype: tuple[int, dict[int, float]]
    """
    if len(unit_points) < 2:
        raise ValueError("leave-one-out needs at least two points")
    curve = {}
    best = None
    for K in sorted(set(candidates)):
        curve[K] = loocv_rmse(unit_points, values, K, taus, constant_tail)
        if best is None or curve[K] < curve[best]:
            best = K
    logger.debug("LOOCV curve %s -> K*=%d", curve, best)
    return best, curve


@dataclass(frozen=True)
class MultiFidelitySurrogate:
    """
    Base surrogate of fidelity 1 plus inter-level error surrogates.

    ``error_levels[i]`` models G_{i+2} - G^_{i+1} on the points shared by both training sets;
    ``None`` when they share no point.
    """
    domain: ParamDomain
    base: SrbfSurrogate
    error_levels: tuple = ()
    training: tuple = ()

    @property
    def n_levels(self) -> int:
        return 1 + len(self.error_levels)

    def level_predictions(self, unit_points) -> list[np.ndarray | None]:
        """
        Tau-predictions of every component, each (P, Theta) or None.
        """
        return [self.base.tau_predictions(unit_points)] + [
            e.tau_predictions(unit_points) if e is not None else None for e in self.error_levels]


def mf_predict(mf: MultiFidelitySurrogate, level: int, y):
    """
    G^_level(y): base prediction plus the first ``level - 1`` inter-level error predictions.

    :param mf: Multi-fidelity surrogate.
    :type mf: MultiFidelitySurrogate
    :param level: Target fidelity, 1 <= level <= M.
    :type level: int
    :param y: Point (N,) or batch (P, N) in native units.
    :type y: array-like
    :return: Prediction(s).
    :rtype: float | np.ndarray
    """
    if not 1 <= level <= mf.n_levels:
        raise ValueError(f"level {level} outside 1..{mf.n_levels}")
    unit = np.atleast_2d(mf.domain.to_unit(y))
    return _single(y, _components_mean([mf.base, *mf.error_levels[:level - 1]], unit))


def _components_mean(components: Sequence[SrbfSurrogate | None], unit_points) -> np.ndarray:
    total = np.zeros(len(unit_points))
    for c in components:
        if c is not None:
            total = total + c.tau_predictions(unit_points).mean(axis=1)
    return total


def uncertainty_components(mf: MultiFidelitySurrogate, y) -> np.ndarray:
    """
    Uncertainty of the base and of each inter-level surrogate, shape (P, M).
    """
    unit = np.atleast_2d(mf.domain.to_unit(y))
    columns = [band_width(p) if p is not None else np.zeros(len(unit)) for p in mf.level_predictions(unit)]
    return np.stack(columns, axis=1)


def mf_uncertainty(mf: MultiFidelitySurrogate, y):
    """
    Root-sum-square of the component uncertainties, treated as uncorrelated.
    """
    return _single(y, np.sqrt(np.sum(uncertainty_components(mf, y) ** 2, axis=1)))


def _training_units(mf: MultiFidelitySurrogate) -> np.ndarray:
    points = sorted({r.y for records in mf.training for r in records})
    return mf.domain.to_unit(np.array(points, dtype=float)) if points else np.empty((0, mf.domain.n_params))


def infill_point(mf: MultiFidelitySurrogate, optimizer: PsoConfig, min_spacing: float = 0.0
                 ) -> tuple[np.ndarray, float]:
    """
    Maximizer of the multi-fidelity uncertainty over the box, found by the particle swarm.

    With ``min_spacing`` > 0 the objective is damped by min(1, d / min_spacing), d the unit-cube
    distance to the nearest training point, so points already trained are never picked again.
    Falls back to a full-factorial scan when the swarm fails.

    :return: The point and its undamped uncertainty.
    :rtype: tuple[np.ndarray, float]
    """
    existing = _training_units(mf) if min_spacing > 0 else np.empty((0, 0))

    def objective(points):
        points = np.atleast_2d(points)
        u = mf_uncertainty(mf, points)
        if not len(existing):
            return u
        gap = cdist(mf.domain.to_unit(points), existing).min(axis=1)
        return u * np.minimum(1.0, gap / min_spacing)

    try:
        y_star, value = pso_maximize(objective, optimizer, box=mf.domain)
    except (OptimizationError, np.linalg.LinAlgError, FloatingPointError) as err:
        logger.warning("swarm failed (%s); scanning a lattice instead", err)
        y_star, value = full_factorial_scan(objective, mf.domain)
    if len(existing):
        value = float(mf_uncertainty(mf, y_star))
    return y_star, value


def choose_fidelity(mf: MultiFidelitySurrogate, y_star, gamma: Sequence[float]) -> int:
    """
    Fidelity (1-based) with the largest cost-scaled uncertainty component at ``y_star``;
    the cheapest one on ties.

    :param gamma: Strictly positive cost per fidelity, one per level.
    :type gamma: Sequence[float]
    """
    components = np.asarray(uncertainty_components(mf, np.atleast_2d(y_star)), dtype=float).reshape(-1)
    gamma = np.asarray(gamma, dtype=float)
    if len(gamma) != len(components) or np.any(gamma <= 0):
        raise ValueError("gamma must hold one strictly positive cost per fidelity")
    return int(np.argmax(components / gamma)) + 1


def initial_design(dom: ParamDomain, kind: Literal["corners", "axis"] = "corners") -> np.ndarray:
    """
    Box center plus the 2^N corners, or plus the 2N axis bounds for ``axis``.
    """
    n = dom.n_params
    unit = [np.full(n, 0.5)]
    if kind == "corners":
        for corner in np.ndindex(*([2] * n)):
            unit.append(np.array(corner, dtype=float))
    else:
        for k in range(n):
            for bound in (0.0, 1.0):
                point = np.full(n, 0.5)
                point[k] = bound
                unit.append(point)
    return dom.from_unit(np.array(unit))


@dataclass
class LevelFit:
    """
    Center-count tuning of one surrogate component.
    """
    k_star: int
    mode: Literal["interpolation", "regression"]
    rmse: float | None = None
    tuned: bool = False


@dataclass
class SrbfState:
    """
    Adaptive loop state: one training set per fidelity keyed by the point, plus the current surrogate.
    """
    domain: ParamDomain
    gamma: tuple[float, ...]
    training: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    mf: MultiFidelitySurrogate | None = None
    value_range: float | None = None
    iteration: int = 0
    mean: float = 0.0
    std: float = 0.0
    cost_spent: float = 0.0
    max_uncertainty: float = 0.0
    next_infill: np.ndarray | None = None
    stopped: bool = False
    exhausted: bool = False
    history: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.gamma)

    def training_sizes(self) -> list[int]:
        return [len(t) for t in self.training]


def _arrays(records: Sequence[EvalRecord], dom: ParamDomain) -> tuple[np.ndarray, np.ndarray]:
    points = np.array([r.y for r in records], dtype=float)
    return dom.to_unit(points), np.array([r.value for r in records], dtype=float)


def loocv_strata(taus: np.ndarray, count: int) -> np.ndarray:
    """
    ``count`` exponents spread evenly over the predictor's strata, so the leave-one-out
    surrogates are scored with exponents the final surrogate also uses.
    """
    taus = np.asarray(taus, dtype=float)
    if count >= len(taus):
        return taus
    return taus[((np.arange(count) + 0.5) * len(taus) / count).astype(int)]


def _tune(unit_points, values, previous: LevelFit | None, cfg: SrbfConfig, n_params: int,
          loocv_taus: np.ndarray, retune: bool) -> LevelFit:
    J = len(unit_points)
    threshold = cfg.regression_threshold or 5 ** n_params
    if J <= threshold or J < 2:
        return LevelFit(k_star=J, mode="interpolation")
    if not retune and previous is not None and previous.tuned:
        if previous.mode == "interpolation":
            return LevelFit(k_star=J, mode="interpolation", rmse=previous.rmse, tuned=True)
        return LevelFit(k_star=min(previous.k_star, J), mode="regression", rmse=previous.rmse, tuned=True)
    # regression candidates stay overdetermined on every reduced set; J itself is the interpolant
    k_cap = J - 2 - int(cfg.constant_tail)
    k_min = cfg.k_min or n_params + 1
    lo = previous.k_star if previous is not None and previous.tuned and previous.mode == "regression" else k_min
    lo = min(max(lo, 1), k_cap)
    candidates = candidate_range(lo, k_cap, cfg.loocv_max_candidates - 1) if k_cap >= 1 else []
    k_star, curve = loocv_select_K(unit_points, values, candidates + [J], loocv_taus, cfg.constant_tail)
    mode = "interpolation" if k_star >= J else "regression"
    return LevelFit(k_star=k_star, mode=mode, rmse=curve[k_star], tuned=True)


def build_multifidelity(training: Sequence[Sequence[EvalRecord]], dom: ParamDomain, cfg: SrbfConfig,
                        previous: Sequence[LevelFit | None] = (), retune: bool = True
                        ) -> tuple[MultiFidelitySurrogate, list[LevelFit]]:
    """
    Build the base surrogate and the inter-level error surrogates one level at a time.

    The error training values of level i+1 use the prediction G^_i of the levels built so far.

    :param training: Records per fidelity, fidelity 1 first.
    :type training: Sequence[Sequence[EvalRecord]]
    :param previous: Tuning of the last build, per level.
    :type previous: Sequence[LevelFit | None]
    :param retune: Run the center-count search; otherwise keep the previous K*.
    :type retune: bool
    :return: The surrogate and the tuning per level.
    :rtype: tuple[MultiFidelitySurrogate, list[LevelFit]]
    """
    if not training or not training[0]:
        raise StructuralError("the lowest fidelity has no training points")
    taus = tau_samples(cfg.tau_min, cfg.tau_max, cfg.theta)
    loocv_taus = loocv_strata(taus, cfg.loocv_theta)
    previous = list(previous) + [None] * (len(training) - len(previous))
    fits, components = [], []
    for level, records in enumerate(training):
        if level == 0:
            points, values = _arrays(records, dom)
        else:
            lower = {r.y for r in training[level - 1]}
            shared = [r for r in records if r.y in lower]
            if not shared:
                fits.append(LevelFit(k_star=0, mode="interpolation"))
                components.append(None)
                continue
            points, values = _arrays(shared, dom)
            values = values - _components_mean(components, points)
        fit = _tune(points, values, previous[level], cfg, dom.n_params, loocv_taus, retune)
        fits.append(fit)
        components.append(build_surrogate(points, values, fit.k_star, taus, cfg.constant_tail))
    mf = MultiFidelitySurrogate(domain=dom, base=components[0], error_levels=tuple(components[1:]),
                                training=tuple(tuple(t) for t in training))
    return mf, fits


def srbf_quadrature(mf: MultiFidelitySurrogate, S_per_dim: int = 100) -> float:
    """
    Mean of G^_M over the full-factorial midpoint lattice with ``S_per_dim`` cells per direction.
    """
    mean, _ = surrogate_moments(lambda y: mf_predict(mf, mf.n_levels, y), mf.domain, "midpoint100", S_per_dim)
    return mean


def _stop_threshold(state: SrbfState, cfg: SrbfConfig) -> float:
    scale = max((abs(r.value) for t in state.training for r in t.values()), default=1.0)
    return cfg.uncertainty_stop * (state.value_range or 0.0) + 1e-10 * max(scale, 1.0)


def _refresh(state: SrbfState, cfg: SrbfConfig, retune: bool):
    training = [list(t.values()) for t in state.training]
    state.mf, state.fits = build_multifidelity(training, state.domain, cfg, state.fits, retune=retune)


def _analyze(state: SrbfState, cfg: SrbfConfig, pso: PsoConfig):
    state.mean, state.std = surrogate_moments(
        lambda y: mf_predict(state.mf, state.n_levels, y), state.domain, "midpoint100", cfg.midpoint_per_dim)
    y_star, u_star = infill_point(state.mf, pso, cfg.min_spacing)
    state.next_infill, state.max_uncertainty = y_star, u_star


def _log(state: SrbfState, harness: ModelHarness, infill: list[InfillPoint]) -> SrbfIterationLog:
    rng = state.value_range or 0.0
    entry = SrbfIterationLog(
        iteration=state.iteration,
        training_sizes=state.training_sizes(),
        k_star=[f.k_star for f in state.fits],
        modes=[f.mode for f in state.fits],
        infill=infill,
        max_uncertainty=state.max_uncertainty,
        max_uncertainty_pct=100.0 * state.max_uncertainty / rng if rng > 0 else 0.0,
        mean=state.mean,
        std=state.std,
        cost_spent=state.cost_spent,
        counts=harness.counts(),
        noise=[f.rmse / rng if f.mode == "regression" and f.rmse is not None and rng > 0 else None
               for f in state.fits],
    )
    state.history.append(entry)
    return entry


def _gamma(cfg: SrbfConfig, harness: ModelHarness) -> tuple[float, ...]:
    levels = harness.model.n_fidelities[0]
    gamma = cfg.gamma if cfg.gamma is not None else [harness.model.cost((a,)) for a in range(1, levels + 1)]
    if len(gamma) != levels:
        raise ConfigError(f"gamma needs {levels} costs, got {len(gamma)}")
    return tuple(float(g) for g in gamma)


async def srbf_initialize(harness: ModelHarness, cfg: SrbfConfig, pso: PsoConfig) -> SrbfState:
    """
    Evaluate the initial design on every fidelity and build the first surrogate.
    """
    model = harness.model
    if model.d_phys != 1:
        raise StructuralError("the stochastic RBF loop needs a scalar fidelity index")
    state = SrbfState(domain=model.domain, gamma=_gamma(cfg, harness))
    design = initial_design(model.domain, cfg.initial_design)
    requests = [((level,), y) for level in range(1, state.n_levels + 1) for y in design]
    records = await harness.evaluate_batch(requests)
    state.training = [dict() for _ in range(state.n_levels)]
    for record in records:
        state.training[record.alpha[0] - 1][record.y] = record
    high = [r.value for r in state.training[-1].values()]
    state.value_range = float(max(high) - min(high))
    state.iteration = 1
    state.cost_spent = harness.cost_spent
    _refresh(state, cfg, retune=True)
    _analyze(state, cfg, pso)
    _log(state, harness, [])
    logger.info("SRBF iteration 1: mean %.10g, std %.6g, cost %g, max U %.3e",
                state.mean, state.std, state.cost_spent, state.max_uncertainty)
    return state


async def srbf_iteration(state: SrbfState, harness: ModelHarness, cfg: SrbfConfig, pso: PsoConfig) -> SrbfState:
    """
    One outer iteration: ``infill_batch`` provisional sub-iterations, one real batch evaluation,
    then a full rebuild with re-tuned center counts and fresh statistics.
    """
    snapshot = [dict(t) for t in state.training]
    fits = list(state.fits)
    chosen: list[tuple[np.ndarray, int, float]] = []
    try:
        for sub in range(cfg.infill_batch):
            if sub > 0:
                _refresh(state, cfg, retune=False)
                y_star, u_star = infill_point(state.mf, pso, cfg.min_spacing)
            else:
                y_star, u_star = state.next_infill, state.max_uncertainty
            y_key = tuple(float(v) for v in y_star)
            if any(tuple(float(v) for v in y) == y_key for y, _, _ in chosen):
                logger.debug("infill point %s already chosen in this batch", y_key)
                continue
            k = choose_fidelity(state.mf, y_star, state.gamma)
            chosen.append((y_star, k, u_star))
            for level in range(1, k + 1):
                if y_key not in state.training[level - 1]:
                    state.training[level - 1][y_key] = EvalRecord(
                        y=y_key, alpha=(level,), value=float(mf_predict(state.mf, level, y_star)),
                        provisional=True, origin="surrogate-prediction")
        requests = [((level,), y) for y, k, _ in chosen for level in range(1, k + 1)]
        records = await harness.evaluate_batch(requests)
    except Exception:
        state.training, state.fits = snapshot, fits
        raise
    state.training = snapshot
    before = sum(state.training_sizes())
    for record in records:
        state.training[record.alpha[0] - 1][record.y] = record
    state.exhausted = sum(state.training_sizes()) == before
    if state.exhausted:
        logger.warning("SRBF batch added no new training point")
    state.fits = fits
    state.iteration += 1
    state.cost_spent = harness.cost_spent
    _refresh(state, cfg, retune=True)
    _analyze(state, cfg, pso)
    infill = [InfillPoint(y=tuple(float(v) for v in y), fidelity=k, uncertainty=u) for y, k, u in chosen]
    _log(state, harness, infill)
    logger.info("SRBF iteration %d: J=%s K*=%s mean %.10g, std %.6g, cost %g, max U %.3e",
                state.iteration, state.training_sizes(), [f.k_star for f in state.fits],
                state.mean, state.std, state.cost_spent, state.max_uncertainty)
    return state


async def run_srbf(harness: ModelHarness, cfg: SrbfConfig, pso: PsoConfig) -> SrbfState:
    """
    Run the adaptive loop until the budget is spent, the uncertainty falls below
    ``uncertainty_stop`` of the range, the iteration cap is hit or a batch adds no new point.
    """
    state = await srbf_initialize(harness, cfg, pso)
    while True:
        if state.max_uncertainty <= _stop_threshold(state, cfg):
            logger.info("SRBF uncertainty %.3e below the stopping threshold", state.max_uncertainty)
            break
        if state.cost_spent >= cfg.budget or state.iteration >= cfg.max_iterations:
            break
        if state.exhausted:
            logger.info("SRBF infill exhausted: the last batch repeated trained points")
            break
        await srbf_iteration(state, harness, cfg, pso)
    state.stopped = True
    logger.info("SRBF finished after %d iterations, cost %g", state.iteration, state.cost_spent)
    return state


def training_records(state: SrbfState) -> list[EvalRecord]:
    """
    Real training records of all fidelities, provisional rows excluded.
    """
    return [r for t in state.training for r in t.values() if not r.provisional]
