"""
Multi-index stochastic collocation: mixed details by the combination technique, the
profit-driven adaptive loop, the quadrature estimate and the interpolatory surrogate.

Every multi-index is the concatenation ``alpha + beta`` of the physical part (length
``d_phys``) and the parametric part (length N).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.errors import StructuralError
from src.schemas import ExploredIndex, MiscConfig, MiscIterationLog
from src.services.models import ModelHarness
from src.services.multiindex import IndexSet, MultiIndex, binary_offsets, reduced_margin
from src.services.quadrature import level_to_nodes, tensor_interpolate, tensor_rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TensorEstimate:
    """
    Full-tensor quadrature Q_{alpha,beta} with the grid values kept for interpolation.
    """
    values: np.ndarray
    mean: float
    second: float


@dataclass
class IndexRecord:
    error: float
    work: float
    profit: float
    unavailable: bool = False


@dataclass
class MiscState:
    """
    Current adaptive approximation.

    :param selected: Index set I, downward closed at all times.
    :param explored: Index set G; every member contributes to the estimate.
    :param reserve: Explored-but-not-selected indices R, including unavailable ones.
    :param records: Error, work and profit per index.
    :param tensors: Tensor estimates per explored index.
    """
    d_phys: int
    selected: IndexSet
    explored: IndexSet
    reserve: set = field(default_factory=set)
    records: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)
    estimate: float = 0.0
    second_moment: float = 0.0
    cost_spent: float = 0.0
    iteration: int = 0
    stalled: bool = False
    history: list = field(default_factory=list)

    @property
    def std(self) -> float:
        return math.sqrt(max(self.second_moment - self.estimate ** 2, 0.0))


def split(index: MultiIndex, d_phys: int) -> tuple[MultiIndex, MultiIndex]:
    return tuple(index[:d_phys]), tuple(index[d_phys:])


def combination_coefficients(lam: IndexSet) -> dict[MultiIndex, int]:
    """
    Combination-technique coefficients of a downward closed set.

    :param lam: Downward closed index set.
    :type lam: IndexSet
    :return: Non-zero coefficients keyed by multi-index.
    :rtype: dict[MultiIndex, int]
    """
    if len(lam) == 0 or not lam.downward_closed:
        raise StructuralError(f"{lam!r} is not a non-empty downward closed set")
    coefficients = {}
    for index in lam:
        c = 0
        for offset in binary_offsets(len(index)):
            if tuple(a + b for a, b in zip(index, offset)) in lam:
                c += (-1) ** sum(offset)
        if c:
            coefficients[index] = c
    return coefficients


def work_contribution(alpha, beta, cost_fn: Callable) -> float:
    """
    cost(alpha) times the number of new nested points the grid of ``beta`` brings.
    """
    new_points = math.prod(level_to_nodes(b) - level_to_nodes(b - 1) for b in beta)
    return cost_fn(tuple(alpha)) * new_points


async def _evaluate_tensors(pairs, harness: ModelHarness) -> list[TensorEstimate]:
    # one batch for all grids so the harness can run the solver calls concurrently
    rules = [tensor_rule(beta, harness.model.domain) for _, beta in pairs]
    requests = [(alpha, point) for (alpha, _), rule in zip(pairs, rules) for point in rule.points]
    records = await harness.evaluate_batch(requests)
    estimates, start = [], 0
    for rule in rules:
        values = np.array([r.value for r in records[start:start + len(rule.weights)]])
        start += len(rule.weights)
        estimates.append(TensorEstimate(values=values, mean=float(np.dot(rule.weights, values)),
                                        second=float(np.dot(rule.weights, values ** 2))))
    return estimates


async def tensor_estimate(alpha, beta, harness: ModelHarness) -> float:
    """
    Q_{alpha,beta}: weighted sum of G_alpha over the tensor grid of ``beta``.

    :param alpha: Physical multi-index.
    :type alpha: tuple[int, ...]
    :param beta: Parametric multi-index.
    :type beta: tuple[int, ...]
    :param harness: Cached model access.
    :type harness: ModelHarness
    :return: The tensor quadrature value.
    :rtype: float
    """
    (estimate,) = await _evaluate_tensors([(tuple(alpha), tuple(beta))], harness)
    return estimate.mean


async def _tensor(index: MultiIndex, d_phys: int, harness: ModelHarness, cache: dict) -> TensorEstimate:
    if index not in cache:
        alpha, beta = split(index, d_phys)
        (cache[index],) = await _evaluate_tensors([(alpha, beta)], harness)
    return cache[index]


async def mixed_detail(alpha, beta, harness: ModelHarness, cache: dict | None = None) -> float:
    """
    Mixed difference of tensor estimates over all {0,1} down-shifts, Q vanishing at level 0.

    :param cache: Tensor estimates already computed, keyed by full multi-index; filled in place.
    :type cache: dict | None
    """
    cache = {} if cache is None else cache
    index = tuple(alpha) + tuple(beta)
    total = 0.0
    for offset in binary_offsets(len(index)):
        lower = tuple(c - o for c, o in zip(index, offset))
        if min(lower) == 0:
            continue
        estimate = await _tensor(lower, len(alpha), harness, cache)
        total += (-1) ** sum(offset) * estimate.mean
    return total


async def error_contribution(alpha, beta, harness: ModelHarness, cache: dict | None = None) -> float:
    """
    E_{alpha,beta} = |mixed detail|.
    """
    return abs(await mixed_detail(alpha, beta, harness, cache))


async def combination_estimate(lam: IndexSet, d_phys: int, harness: ModelHarness, cache: dict | None = None) -> float:
    """
    Combination-technique estimate over an arbitrary downward closed set.

    :param lam: Downward closed set of full multi-indices.
    :type lam: IndexSet
    :param d_phys: Number of physical components.
    :type d_phys: int
    :param cache: Tensor estimates keyed by full multi-index; filled in place.
    :type cache: dict | None
    """
    cache = {} if cache is None else cache
    coefficients = combination_coefficients(lam)
    missing = [k for k in coefficients if k not in cache]
    if missing:
        for k, estimate in zip(missing, await _evaluate_tensors([split(k, d_phys) for k in missing], harness)):
            cache[k] = estimate
    return math.fsum(c * cache[k].mean for k, c in coefficients.items())


def _combine(state: MiscState, moment: str) -> float:
    coefficients = combination_coefficients(state.explored)
    return math.fsum(c * getattr(state.tensors[k], moment) for k, c in coefficients.items())


def misc_estimate(state: MiscState) -> float:
    """
    Combination-technique estimate of the expected value over the explored set G.
    """
    return _combine(state, "mean")


def misc_std(state: MiscState) -> float:
    """
    Standard deviation from the combination estimates of E[G] and E[G^2].
    """
    mean = _combine(state, "mean")
    return math.sqrt(max(_combine(state, "second") - mean ** 2, 0.0))


def misc_surrogate_eval(state: MiscState, y, dom, alpha_view=None):
    """
    Combination of tensor Lagrange interpolants over the explored set.

    :param state: MISC state with at least one explored index.
    :type state: MiscState
    :param y: Point (N,) or batch (P, N) inside the box.
    :type y: array-like
    :param dom: Parameter box.
    :type dom: ParamDomain
    :param alpha_view: None for the full multi-index surrogate; a physical index to get the
        sparse-grid interpolant of that fidelity alone.
    :type alpha_view: tuple[int, ...] | None
    :return: Surrogate value(s).
    :rtype: float | np.ndarray
    """
    d = state.d_phys
    if alpha_view is None:
        terms = [(split(k, d)[1], c, state.tensors[k].values)
                 for k, c in combination_coefficients(state.explored).items()]
    else:
        alpha_view = tuple(alpha_view)
        betas = IndexSet(split(k, d)[1] for k in state.explored if split(k, d)[0] == alpha_view)
        if len(betas) == 0:
            raise StructuralError(f"fidelity {alpha_view} was never explored")
        terms = [(beta, c, state.tensors[alpha_view + beta].values)
                 for beta, c in combination_coefficients(betas).items()]
    result = 0.0
    for beta, c, values in terms:
        result = result + c * tensor_interpolate(beta, values, y, dom)
    return result


def _fidelity_cap(config: MiscConfig, harness: ModelHarness) -> tuple[int, ...]:
    caps = tuple(harness.model.n_fidelities)
    if config.max_alpha is not None:
        caps = tuple(min(a, b) for a, b in zip(caps, config.max_alpha))
    return caps


def _check_dimensions(config: MiscConfig, harness: ModelHarness):
    model = harness.model
    if config.d_phys is not None and config.d_phys != model.d_phys:
        raise StructuralError(f"configured d_phys={config.d_phys} but the model has {model.d_phys}")
    if config.n_params is not None and config.n_params != model.n_params:
        raise StructuralError(f"configured n_params={config.n_params} but the model has {model.n_params}")
    if config.max_alpha is not None and len(config.max_alpha) != model.d_phys:
        raise StructuralError("max_alpha needs one cap per physical direction")


def _log(state: MiscState, harness: ModelHarness, added, explored: list[MultiIndex]) -> MiscIterationLog:
    entry = MiscIterationLog(
        iteration=state.iteration,
        added_index=added,
        explored=[ExploredIndex(index=k, error=state.records[k].error, work=state.records[k].work,
                                profit=state.records[k].profit, unavailable=state.records[k].unavailable)
                  for k in explored],
        estimate=state.estimate,
        std=state.std,
        cost_spent=state.cost_spent,
        counts=harness.counts(),
        stalled=state.stalled,
    )
    state.history.append(entry)
    return entry


async def misc_initialize(harness: ModelHarness, config: MiscConfig) -> MiscState:
    """
    Start from the root index: I = G = {root}, R empty, estimate on the coarsest grid.
    """
    _check_dimensions(config, harness)
    model = harness.model
    root = (1,) * (model.d_phys + model.n_params)
    alpha, beta = split(root, model.d_phys)
    state = MiscState(d_phys=model.d_phys, selected=IndexSet([root]), explored=IndexSet([root]))
    (state.tensors[root],) = await _evaluate_tensors([(alpha, beta)], harness)
    work = work_contribution(alpha, beta, model.cost)
    error = abs(state.tensors[root].mean)
    state.records[root] = IndexRecord(error=error, work=work, profit=error / work)
    state.cost_spent = work
    state.estimate = misc_estimate(state)
    state.second_moment = _combine(state, "second")
    _log(state, harness, root, [root])
    logger.info("MISC root estimate %.10g at cost %g", state.estimate, state.cost_spent)
    return state


async def misc_step(state: MiscState, harness: ModelHarness, config: MiscConfig) -> MiscState:
    """
    One pass of the adaptive loop: explore the admissible margin of I, then move the
    highest-profit member of R into I.

    Indices needing an unavailable fidelity get profit 0, stay in R and are never selected.
    When nothing new can be explored and nothing can be selected, the state is flagged stalled.
    """
    model = harness.model
    d = state.d_phys
    caps = _fidelity_cap(config, harness)
    candidates = [k for k in reduced_margin(state.selected) if k not in state.explored and k not in state.records]
    fresh = []
    for k in candidates:
        alpha, beta = split(k, d)
        work = work_contribution(alpha, beta, model.cost)
        if any(a > cap for a, cap in zip(alpha, caps)):
            state.records[k] = IndexRecord(error=0.0, work=work, profit=0.0, unavailable=True)
            state.reserve.add(k)
            logger.info("index %s needs unavailable fidelity %s; profit set to 0", k, alpha)
        else:
            fresh.append(k)
    if fresh:
        estimates = await _evaluate_tensors([split(k, d) for k in fresh], harness)
        for k, estimate in zip(fresh, estimates):
            state.tensors[k] = estimate
        for k in fresh:
            alpha, beta = split(k, d)
            error = await error_contribution(alpha, beta, harness, state.tensors)
            work = work_contribution(alpha, beta, model.cost)
            state.records[k] = IndexRecord(error=error, work=work, profit=error / work)
            state.explored = state.explored.add(k)
            state.reserve.add(k)
            state.cost_spent += work
            logger.debug("explored %s: E=%.3e W=%g P=%.3e", k, error, work, error / work)

    selectable = sorted(k for k in state.reserve if not state.records[k].unavailable)
    state.iteration += 1
    added = None
    if not selectable:
        state.stalled = True
    else:
        best = max(selectable, key=lambda k: state.records[k].profit)
        if config.profit_floor > 0 and state.records[best].profit < config.profit_floor:
            state.stalled = True
        else:
            state.selected = state.selected.add(best)
            state.reserve.discard(best)
            added = best
    state.estimate = misc_estimate(state)
    state.second_moment = _combine(state, "second")
    _log(state, harness, added, fresh + [k for k in candidates if k not in fresh])
    logger.info("MISC iteration %d: added %s, estimate %.10g, std %.6g, cost %g",
                state.iteration, added, state.estimate, state.std, state.cost_spent)
    return state


async def run_misc(harness: ModelHarness, config: MiscConfig) -> MiscState:
    """
    Run the adaptive loop until the budget is spent, the iteration cap is hit or the loop stalls.
    """
    state = await misc_initialize(harness, config)
    while (state.cost_spent < config.budget and state.iteration < config.max_iterations
           and not state.stalled):
        await misc_step(state, harness, config)
    logger.info("MISC finished after %d iterations, cost %g (stalled=%s)",
                state.iteration, state.cost_spent, state.stalled)
    return state
