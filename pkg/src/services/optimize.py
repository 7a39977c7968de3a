"""
Deterministic particle swarm used to maximize the surrogate prediction uncertainty.
"""
import logging
from itertools import product
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from src.errors import DomainError, OptimizationError
from src.schemas import ParamDomain, PsoConfig

logger = logging.getLogger(__name__)

# maps a batch of points (P, N) in native units to values (P,)
Objective = Callable[[np.ndarray], np.ndarray]


def initial_swarm(n_dim: int, levels: int) -> np.ndarray:
    """
    Full-factorial lattice of the unit cube with ``levels`` points per direction.

    The box center is appended when the lattice misses it (even ``levels``).

    :param n_dim: Number of parameters.
    :type n_dim: int
    :param levels: Lattice points per direction, corners included.
    :type levels: int
    :return: Unit-cube positions, shape (n_particles, n_dim).
    :rtype: np.ndarray
    """
    axis = np.linspace(0.0, 1.0, levels)
    lattice = np.array(list(product(axis, repeat=n_dim)), dtype=float)
    if levels % 2 == 0:
        lattice = np.vstack([lattice, np.full((1, n_dim), 0.5)])
    return lattice


def _values(objective: Objective, box: ParamDomain, unit_points: np.ndarray) -> np.ndarray:
    values = np.asarray(objective(box.from_unit(unit_points)), dtype=float).reshape(-1)
    if values.shape[0] != unit_points.shape[0]:
        raise ValueError(f"objective returned {values.shape[0]} values for {unit_points.shape[0]} points")
    return values


def full_factorial_scan(objective: Objective, box: ParamDomain, per_dim: int = 21) -> tuple[np.ndarray, float]:
    """
    Best point of a plain lattice scan, used when the swarm cannot be trusted.
    """
    unit = initial_swarm(box.n_params, per_dim)
    values = _values(objective, box, unit)
    values[~np.isfinite(values)] = -np.inf
    best = int(np.argmax(values))
    if not np.isfinite(values[best]):
        raise OptimizationError("objective is not finite anywhere on the scan lattice")
    return box.from_unit(unit[best]), float(values[best])


def _polish(objective: Objective, box: ParamDomain, start: np.ndarray, best: float):
    def negative(u):
        value = _values(objective, box, np.clip(u, 0.0, 1.0)[None, :])[0]
        return -value if np.isfinite(value) else np.inf

    n = start.size
    result = minimize(negative, start, method="Nelder-Mead", bounds=[(0.0, 1.0)] * n,
                      options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400 * n})
    candidate = np.clip(result.x, 0.0, 1.0)
    value = _values(objective, box, candidate[None, :])[0]
    if np.isfinite(value) and value > best:
        return candidate, float(value)
    return start, best


def pso_maximize(objective: Objective, cfg: PsoConfig, box: ParamDomain | None = None) -> tuple[np.ndarray, float]:
    """
    Synchronous particle swarm without random coefficients.

    Velocities follow ``v <- chi * (v + c1 (p_best - y) + c2 (g_best - y))``; positions are clamped
    to the box and the velocity component is zeroed at a wall. A particle whose objective is not
    finite is frozen for the rest of the run.

    :param objective: Vectorized objective on points of the box, shape (P, N) -> (P,).
    :type objective: Callable
    :param cfg: Swarm settings.
    :type cfg: PsoConfig
    :param box: Search box; falls back to ``cfg.box``.
    :type box: ParamDomain | None
    :return: Best point in native units and its objective value.
    :rtype: tuple[np.ndarray, float]
    """
    box = box if box is not None else cfg.box
    if box is None:
        raise DomainError("particle swarm needs a search box")
    x = initial_swarm(box.n_params, cfg.lattice_levels)
    v = np.zeros_like(x)
    f = _values(objective, box, x)
    frozen = ~np.isfinite(f)
    if frozen.any():
        logger.warning("%d particles frozen on a non-finite objective", int(frozen.sum()))
    f[frozen] = -np.inf
    p_best, p_val = x.copy(), f.copy()
    g = int(np.argmax(p_val))
    if not np.isfinite(p_val[g]):
        raise OptimizationError("objective is not finite at any initial particle")
    g_best, g_val = p_best[g].copy(), float(p_val[g])

    stall = 0
    for iteration in range(cfg.max_iters):
        active = ~frozen
        if not active.any():
            break
        v[active] = cfg.inertia * (v[active] + cfg.cognitive * (p_best[active] - x[active])
                                   + cfg.social * (g_best - x[active]))
        x[active] += v[active]
        low, high = x < 0.0, x > 1.0
        x[low], x[high] = 0.0, 1.0
        v[low | high] = 0.0

        idx = np.flatnonzero(active)
        f = _values(objective, box, x[idx])
        bad = ~np.isfinite(f)
        if bad.any():
            frozen[idx[bad]] = True
            logger.warning("iteration %d: %d particles frozen on a non-finite objective", iteration, int(bad.sum()))
        better = np.isfinite(f) & (f > p_val[idx])
        p_best[idx[better]] = x[idx[better]]
        p_val[idx[better]] = f[better]

        g = int(np.argmax(p_val))
        previous = g_val
        if p_val[g] > g_val:
            g_best, g_val = p_best[g].copy(), float(p_val[g])
        if g_val - previous <= cfg.stagnation_tol * max(abs(previous), np.finfo(float).tiny):
            stall += 1
        else:
            stall = 0
        if stall >= cfg.stagnation_window:
            logger.debug("swarm stagnated after %d iterations at %.6g", iteration + 1, g_val)
            break

    if cfg.polish:
        g_best, g_val = _polish(objective, box, g_best, g_val)
    return box.from_unit(g_best), g_val
