from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ParamDomain(BaseModel):
    """
    Box of uncertain parameters with uniform, independent density.

    :param lower: Lower bounds, one per parameter.
    :type lower: list[float]
    :param upper: Upper bounds, one per parameter.
    :type upper: list[float]
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @model_validator(mode="after")
    def check_bounds(self):
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be non-empty and of equal length")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"lower bound {lo} is not below upper bound {hi}")
        return self

    @property
    def n_params(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return self.from_unit(np.full(self.n_params, 0.5))

    def to_unit(self, points) -> np.ndarray:
        """
        Map points of the box affinely onto the unit hypercube.

        :param points: Array of shape (N,) or (P, N).
        :type points: array-like
        :return: Normalized coordinates with the same shape.
        :rtype: np.ndarray
        """
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        return (np.asarray(points, dtype=float) - lower) / (upper - lower)

    def from_unit(self, points) -> np.ndarray:
        """
        Map unit-hypercube coordinates back onto the box.

        :param points: Array of shape (N,) or (P, N).
        :type points: array-like
        :return: Points in native parameter units.
        :rtype: np.ndarray
        """
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        return lower + np.asarray(points, dtype=float) * (upper - lower)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        unit = np.atleast_2d(self.to_unit(points))
        return np.all((unit >= -tol) & (unit <= 1.0 + tol), axis=-1)


# Speed in m/s and draught in m at model scale.
ROPAX_DOMAIN = ParamDomain(lower=(1.185, 0.2355), upper=(2.567, 0.2878))


class ModelConfig(BaseModel):
    """
    Reference to a multi-fidelity model: a builtin benchmark or an external solver command.

    :param builtin: Name of a builtin benchmark, see ``src.services.models.BUILTINS``.
    :type builtin: str | None
    :param command: External solver command line; request and reply paths are appended.
    :type command: list[str] | None
    :param domain: Parameter box.
    :type domain: ParamDomain
    :param n_fidelities: Number of fidelity levels per physical direction.
    :type n_fidelities: list[int]
    :param cost_base: Cost growth per level, cost(alpha) = prod(cost_base ** (alpha_k - 1)).
    :type cost_base: float
    :param noise_amp: Noise amplitude of builtin fidelity 1 as a fraction of the range.
    :type noise_amp: float
    :param seed: Seed of the deterministic builtin noise.
    :type seed: int
    """
    model_config = ConfigDict(extra="forbid")

    builtin: str | None = "exp_cos"
    command: list[str] | None = None
    domain: ParamDomain = ROPAX_DOMAIN
    n_fidelities: list[int] = Field(default_factory=lambda: [4], min_length=1, max_length=3)
    cost_base: float = Field(default=8.0, gt=1.0)
    noise_amp: float = Field(default=0.01, ge=0.0)
    seed: int = 0

    @field_validator("n_fidelities", mode="before")
    @classmethod
    def wrap_scalar(cls, value):
        return [value] if isinstance(value, int) else value

    @field_validator("n_fidelities")
    @classmethod
    def check_levels(cls, value):
        if any(level < 1 for level in value):
            raise ValueError("every fidelity count must be at least 1")
        return value

    @model_validator(mode="after")
    def check_source(self):
        if self.command:
            self.builtin = None
        if self.builtin is None and not self.command:
            raise ValueError("either a builtin name or an external command is required")
        return self


class MiscConfig(BaseModel):
    """
    Settings of the adaptive multi-index stochastic collocation loop.

    ``d_phys``, ``n_params`` and ``max_alpha`` default to the values of the model.
    """
    model_config = ConfigDict(extra="forbid")

    d_phys: int | None = Field(default=None, ge=1, le=3)
    n_params: int | None = Field(default=None, ge=1)
    max_alpha: list[int] | None = None
    budget: float = Field(default=2000.0, gt=0.0)
    max_iterations: int = Field(default=1000, ge=1)
    profit_floor: float = Field(default=0.0, ge=0.0)

    @field_validator("max_alpha")
    @classmethod
    def check_caps(cls, value):
        if value is not None and any(cap < 1 for cap in value):
            raise ValueError("caps must be at least 1")
        return value


class SrbfConfig(BaseModel):
    """
    Settings of the adaptive multi-fidelity stochastic RBF loop.
    """
    model_config = ConfigDict(extra="forbid")

    tau_min: float = 1.0
    tau_max: float = 3.0
    theta: int = Field(default=1000, ge=1)
    regression_threshold: int | None = Field(default=None, ge=1)
    infill_batch: int = Field(default=4, ge=1)
    budget: float = Field(default=6000.0, gt=0.0)
    gamma: list[float] | None = None
    max_iterations: int = Field(default=100, ge=1)
    uncertainty_stop: float = Field(default=0.05, ge=0.0)
    initial_design: Literal["corners", "axis"] = "corners"
    constant_tail: bool = True
    k_min: int | None = Field(default=None, ge=1)
    loocv_theta: int = Field(default=50, ge=1)
    loocv_max_candidates: int = Field(default=12, ge=2)
    midpoint_per_dim: int = Field(default=100, ge=1)
    min_spacing: float = Field(default=0.02, ge=0.0)

    @model_validator(mode="after")
    def check_tau(self):
        if not self.tau_min < self.tau_max:
            raise ValueError("tau_min must be below tau_max")
        if self.gamma is not None and any(g <= 0 for g in self.gamma):
            raise ValueError("gamma must be strictly positive")
        return self


class PsoConfig(BaseModel):
    """
    Settings of the deterministic particle swarm.

    The swarm starts on a full-factorial lattice with ``lattice_levels`` points per direction
    (corners included); the box center is appended when the lattice misses it.
    """
    model_config = ConfigDict(extra="forbid")

    lattice_levels: int = Field(default=4, ge=2)
    max_iters: int = Field(default=200, ge=1)
    inertia: float = Field(default=0.721, gt=0.0)
    cognitive: float = Field(default=1.655, gt=0.0)
    social: float = Field(default=1.655, gt=0.0)
    stagnation_window: int = Field(default=30, ge=1)
    stagnation_tol: float = Field(default=1e-8, ge=0.0)
    polish: bool = True
    box: ParamDomain | None = None

    def n_particles(self, n_dim: int) -> int:
        count = self.lattice_levels ** n_dim
        return count + 1 if self.lattice_levels % 2 == 0 else count


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=10_000, ge=2)
    bins: int = Field(default=25, ge=1)
    kde_points: int = Field(default=512, ge=16)
    surface_resolution: int = Field(default=41, ge=2)


class RunConfig(BaseModel):
    """
    Whole batch run: model, method selection, budgets and engine settings.

    :param budget: When set, overrides the budget of both engines.
    :type budget: float | None
    """
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    model: ModelConfig = Field(default_factory=ModelConfig)
    method: Literal["misc", "srbf", "both"] = "both"
    budget: float | None = Field(default=None, gt=0.0)
    seed: int = 0
    misc: MiscConfig = Field(default_factory=MiscConfig)
    srbf: SrbfConfig = Field(default_factory=SrbfConfig)
    pso: PsoConfig = Field(default_factory=PsoConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    out_dir: Path = Path("results")
    svg: bool = False


class EvalRecord(BaseModel):
    """
    One model evaluation, or a provisional surrogate prediction standing in for one.

    :param y: Parameter point in native units.
    :type y: tuple[float, ...]
    :param alpha: Fidelity multi-index.
    :type alpha: tuple[int, ...]
    :param value: Quantity of interest.
    :type value: float
    :param cost: Normalized cost charged for the evaluation.
    :type cost: float
    :param provisional: True for parallel-infill placeholders.
    :type provisional: bool
    :param origin: ``model`` or ``surrogate-prediction``.
    :type origin: str
    """
    model_config = ConfigDict(frozen=True)

    y: tuple[float, ...]
    alpha: tuple[int, ...]
    value: float
    cost: float = 0.0
    provisional: bool = False
    origin: Literal["model", "surrogate-prediction"] = "model"

    @model_validator(mode="after")
    def check_origin(self):
        if self.provisional != (self.origin == "surrogate-prediction"):
            raise ValueError("provisional records must come from a surrogate prediction and vice versa")
        return self


class QoiSummary(BaseModel):
    """
    Moments, histogram and kernel density estimate of the quantity of interest.
    """
    mean: float
    std: float = Field(ge=0.0)
    samples_used: int
    histogram_edges: list[float]
    histogram_counts: list[int]
    histogram_density: list[float]
    kde: list[tuple[float, float]]
    kde_log_transformed: bool = True


class ExploredIndex(BaseModel):
    index: tuple[int, ...]
    error: float
    work: float
    profit: float
    unavailable: bool = False


class MiscIterationLog(BaseModel):
    iteration: int
    added_index: tuple[int, ...] | None
    explored: list[ExploredIndex]
    estimate: float
    std: float
    cost_spent: float
    counts: dict[str, int]
    stalled: bool = False


class InfillPoint(BaseModel):
    y: tuple[float, ...]
    fidelity: int
    uncertainty: float


class SrbfIterationLog(BaseModel):
    iteration: int
    training_sizes: list[int]
    k_star: list[int]
    modes: list[Literal["interpolation", "regression"]]
    infill: list[InfillPoint]
    max_uncertainty: float
    max_uncertainty_pct: float
    mean: float
    std: float
    cost_spent: float
    counts: dict[str, int]
    noise: list[float | None]


class ConvergencePoint(BaseModel):
    iteration: int
    cost: float
    mean: float
    std: float


class MethodSummary(BaseModel):
    method: Literal["misc", "srbf"]
    final: ConvergencePoint
    history: list[ConvergencePoint]
    evaluations: int
    counts: dict[str, int]
    qoi: QoiSummary | None = None


class RunSummary(BaseModel):
    """
    Machine-readable result of a run, one entry per executed method.
    """
    schema_version: Literal[1] = 1
    model: str
    methods: dict[str, MethodSummary]


class SolverRequest(BaseModel):
    """
    Request file handed to an external solver.
    """
    id: str
    fidelity: list[int]
    params: list[float]


class SolverReply(BaseModel):
    """
    Reply file written by an external solver; a missing cost falls back to the cost model.
    """
    id: str
    value: float
    cost: float | None = None
