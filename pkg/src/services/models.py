"""
Multi-fidelity model abstraction: builtin benchmarks, the external-solver protocol,
the cost model and the cached evaluation harness.
"""
import asyncio
import hashlib
import logging
import math
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from pydantic import ValidationError

from src.conf.config import settings
from src.database.db import EvaluationStore
from src.errors import BatchEvaluationError, DomainError, ModelEvaluationError
from src.repository import evaluations as repository_evaluations
from src.schemas import EvalRecord, ModelConfig, ParamDomain, SolverReply, SolverRequest

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]


def fidelity_label(alpha) -> str:
    return ",".join(str(a) for a in alpha)


@dataclass(frozen=True)
class SyntheticBenchmark:
    """
    Closed-form stand-in for a multi-fidelity solver.

    All callables act on reference coordinates in [-1, 1]^N, shape (P, N).

    :param name: Registry name.
    :param truth: Exact quantity of interest.
    :param bias: ``bias(alpha, yhat)``, vanishing as the fidelity grows.
    :param noise_amp: Base noise amplitude ``a``; fidelity alpha gets ``a * 2 ** -(|alpha| - d)``.
    :param value_range: Range of ``truth`` over the box, scales the noise.
    :param seed: Seed of the deterministic noise.
    """
    name: str
    n_params: int
    truth: ScalarField
    bias: Callable[[tuple, np.ndarray], np.ndarray]
    value_range: float
    noise_amp: float = 0.0
    seed: int = 0

    def noise_level(self, alpha) -> float:
        return self.noise_amp * 2.0 ** -sum(a - 1 for a in alpha)

    def noise(self, alpha, unit_point) -> float:
        amp = self.noise_level(alpha)
        if amp == 0.0 or self.value_range == 0.0:
            return 0.0
        bits = [int(b) for b in np.asarray(unit_point, dtype=np.float64).view(np.uint64)]
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, *alpha, *bits])
        return float(rng.uniform(-1.0, 1.0)) * amp * self.value_range

    def value(self, alpha, unit_point) -> float:
        yhat = 2.0 * np.asarray(unit_point, dtype=float)[None, :] - 1.0
        base = float(self.truth(yhat)[0] + self.bias(tuple(alpha), yhat)[0])
        return base + self.noise(alpha, unit_point)


def _no_bias(alpha, yhat):
    return np.zeros(len(yhat))


def _exp_cos(noise_amp: float, seed: int, n_params: int) -> SyntheticBenchmark:
    if n_params != 2:
        raise ValueError("the exp_cos benchmark has exactly two parameters")

    def bias(alpha, yhat):
        scale = float(np.mean([4.0 ** -a for a in alpha]))
        return 0.3 * scale * np.cos(3.0 * yhat[:, 0] + yhat[:, 1])

    return SyntheticBenchmark(
        name="exp_cos", n_params=2,
        truth=lambda yhat: np.exp(yhat[:, 0]) * np.cos(yhat[:, 1]),
        bias=bias,
        value_range=math.e - math.cos(1.0) / math.e,
        noise_amp=noise_amp, seed=seed)


def _constant(noise_amp: float, seed: int, n_params: int) -> SyntheticBenchmark:
    return SyntheticBenchmark(
        name="constant", n_params=n_params,
        truth=lambda yhat: np.full(len(yhat), 1.5),
        bias=_no_bias, value_range=0.0, noise_amp=noise_amp, seed=seed)


def _linear(noise_amp: float, seed: int, n_params: int) -> SyntheticBenchmark:
    return SyntheticBenchmark(
        name="linear", n_params=n_params,
        truth=lambda yhat: yhat[:, 0].copy(),
        bias=_no_bias, value_range=2.0, noise_amp=noise_amp, seed=seed)


def _quadratic(noise_amp: float, seed: int, n_params: int) -> SyntheticBenchmark:
    return SyntheticBenchmark(
        name="quadratic", n_params=n_params,
        truth=lambda yhat: yhat[:, 0] ** 2,
        bias=_no_bias, value_range=1.0, noise_amp=noise_amp, seed=seed)


def _polynomial(noise_amp: float, seed: int, n_params: int) -> SyntheticBenchmark:
    # tensor polynomial of degree 2 per direction; every factor lies in [0.75, 1.75]
    return SyntheticBenchmark(
        name="polynomial", n_params=n_params,
        truth=lambda yhat: np.prod(1.0 + 0.5 * yhat + 0.25 * yhat ** 2, axis=1),
        bias=_no_bias, value_range=1.75 ** n_params - 0.75 ** n_params,
        noise_amp=noise_amp, seed=seed)


BUILTINS: dict[str, Callable[[float, int, int], SyntheticBenchmark]] = {
    "exp_cos": _exp_cos,
    "constant": _constant,
    "linear": _linear,
    "quadratic": _quadratic,
    "polynomial": _polynomial,
}


def default_benchmark(noise_amp: float = 0.01, seed: int = 0) -> SyntheticBenchmark:
    """
    Desk-scale fixture: truth exp(y1) cos(y2) on [-1, 1]^2, bias 0.3 * 4^-alpha * cos(3 y1 + y2),
    noise amplitude a * 2^-(alpha - 1) of the range.
    """
    return _exp_cos(noise_amp, seed, 2)


class ExternalSolver:
    """
    File-based protocol for real simulators.

    The command is spawned once per request with the request file path and the reply file path
    appended as its last two arguments; exit status 0 means success.

    :param command: Command line of the solver.
    :type command: list[str]
    :param timeout: Seconds allowed per request.
    :type timeout: float
    """

    def __init__(self, command: list[str], timeout: float | None = None):
        self.command = list(command)
        self.timeout = timeout if timeout is not None else settings.solver_timeout

    async def run(self, request: SolverRequest) -> SolverReply:
        with tempfile.TemporaryDirectory(prefix="mfuq-") as tmp:
            request_path = Path(tmp) / "request.json"
            reply_path = Path(tmp) / "reply.json"
            request_path.write_text(request.model_dump_json(), encoding="utf-8")
            proc = await asyncio.create_subprocess_exec(
                *self.command, str(request_path), str(reply_path),
                stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE)
            try:
                stdout, stderr = await asyncio.wait_for(proc.communicate(), timeout=self.timeout)
            except asyncio.TimeoutError:
                proc.kill()
                await proc.wait()
                raise ModelEvaluationError(
                    f"solver timed out after {self.timeout} s", request.fidelity, request.params,
                    {"timeout": self.timeout})
            diagnostics = {
                "exit_code": proc.returncode,
                "stdout": stdout.decode("utf-8", "replace"),
                "stderr": stderr.decode("utf-8", "replace"),
            }
            if proc.returncode != 0:
                raise ModelEvaluationError(
                    f"solver exited with status {proc.returncode}", request.fidelity, request.params, diagnostics)
            if not reply_path.exists():
                raise ModelEvaluationError("solver wrote no reply file", request.fidelity, request.params, diagnostics)
            text = reply_path.read_text(encoding="utf-8")
        try:
            reply = SolverReply.model_validate_json(text)
        except ValidationError as err:
            diagnostics["reply"] = text
            raise ModelEvaluationError(
                f"malformed solver reply: {err.errors()[0]['msg']}", request.fidelity, request.params, diagnostics)
        if reply.id != request.id:
            diagnostics["reply"] = text
            raise ModelEvaluationError(
                f"reply id {reply.id!r} does not match request {request.id!r}",
                request.fidelity, request.params, diagnostics)
        return reply


@dataclass(frozen=True)
class ModelSpec:
    """
    Description of a multi-fidelity model.

    :param name: Display name.
    :param domain: Parameter box.
    :param n_fidelities: Available levels per physical direction.
    :param cost_base: cost(alpha) = prod(cost_base ** (alpha_k - 1)).
    :param kind: ``builtin`` or ``external``.
    """
    name: str
    domain: ParamDomain
    n_fidelities: tuple[int, ...] = (4,)
    cost_base: float = 8.0
    kind: str = "builtin"
    benchmark: SyntheticBenchmark | None = None
    solver: ExternalSolver | None = field(default=None, compare=False)

    @property
    def n_params(self) -> int:
        return self.domain.n_params

    @property
    def d_phys(self) -> int:
        return len(self.n_fidelities)

    @property
    def fingerprint(self) -> str:
        tag = f"cost={self.cost_base!r}"
        if self.kind == "builtin":
            b = self.benchmark
            return f"builtin:{b.name}:a={b.noise_amp!r}:seed={b.seed}:dom={self.domain.lower}-{self.domain.upper}:{tag}"
        return "external:" + " ".join(self.solver.command) + ":" + tag

    def cost(self, alpha) -> float:
        """
        Normalized cost of one evaluation at fidelity ``alpha``.
        """
        return math.prod(self.cost_base ** (a - 1) for a in alpha)

    def available(self, alpha) -> bool:
        return len(alpha) == self.d_phys and all(1 <= a <= cap for a, cap in zip(alpha, self.n_fidelities))

    async def compute(self, alpha, y: np.ndarray, request_id: str) -> tuple[float, float]:
        """
        Run the model once; returns (value, cost).
        """
        if self.kind == "builtin":
            return self.benchmark.value(alpha, self.domain.to_unit(y)), self.cost(alpha)
        reply = await self.solver.run(SolverRequest(id=request_id, fidelity=list(alpha), params=[float(v) for v in y]))
        return reply.value, reply.cost if reply.cost is not None else self.cost(alpha)


def build_model(config: ModelConfig) -> ModelSpec:
    """
    Create a model from its run-configuration entry.
    """
    levels = tuple(config.n_fidelities)
    if config.command:
        return ModelSpec(name="external", domain=config.domain, n_fidelities=levels,
                         cost_base=config.cost_base, kind="external", solver=ExternalSolver(config.command))
    if config.builtin not in BUILTINS:
        raise ValueError(f"unknown builtin model {config.builtin!r}; choose from {sorted(BUILTINS)}")
    benchmark = BUILTINS[config.builtin](config.noise_amp, config.seed, config.domain.n_params)
    return ModelSpec(name=benchmark.name, domain=config.domain, n_fidelities=levels,
                     cost_base=config.cost_base, kind="builtin", benchmark=benchmark)


class ModelHarness:
    """
    Cached, cost-accounted access to a model for one engine run.

    Each distinct (alpha, point) is computed at most once per store and charged at most once
    per harness; concurrent duplicate requests share one computation.

    :param model: The model to evaluate.
    :type model: ModelSpec
    :param store: Evaluation store shared across runs.
    :type store: EvaluationStore
    :param max_workers: Concurrent solver processes.
    :type max_workers: int
    """

    def __init__(self, model: ModelSpec, store: EvaluationStore | None = None, max_workers: int | None = None):
        self.model = model
        self.store = store if store is not None else EvaluationStore()
        self._semaphore = asyncio.Semaphore(max_workers or settings.max_workers)
        self._inflight: dict[str, asyncio.Future] = {}
        self._ledger: dict[str, EvalRecord] = {}
        self.computed = 0

    def key(self, alpha, y) -> str:
        return repository_evaluations.make_key(self.model.fingerprint, alpha, self.model.domain.to_unit(y))

    async def evaluate(self, alpha, y) -> EvalRecord:
        """
        Evaluate the model at ``(alpha, y)`` through the cache.

        :param alpha: Fidelity multi-index within the model caps.
        :type alpha: tuple[int, ...]
        :param y: Point of the parameter box.
        :type y: array-like
        :return: The evaluation record.
        :rtype: EvalRecord
        """
        alpha = tuple(int(a) for a in alpha)
        y = np.asarray(y, dtype=float)
        if not self.model.available(alpha):
            raise ModelEvaluationError("fidelity not available", alpha, tuple(y))
        if not self.model.domain.contains(y)[0]:
            raise DomainError(f"point {tuple(y)} lies outside the parameter box")
        key = self.key(alpha, y)
        if key in self._ledger:
            return self._ledger[key]
        if key in self._inflight:
            return await asyncio.shield(self._inflight[key])
        future = asyncio.get_running_loop().create_future()
        self._inflight[key] = future
        try:
            record = await repository_evaluations.get_record(key, self.store)
            if record is None:
                async with self._semaphore:
                    request_id = hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]
                    value, cost = await self.model.compute(alpha, y, request_id)
                record = EvalRecord(y=tuple(float(v) for v in y), alpha=alpha, value=value, cost=cost)
                await repository_evaluations.add_record(key, record, self.store)
                self.computed += 1
            self._ledger[key] = record
            future.set_result(record)
            return record
        except Exception as err:
            future.set_exception(err)
            future.exception()
            raise
        finally:
            del self._inflight[key]

    async def evaluate_batch(self, requests: Iterable[tuple]) -> list[EvalRecord]:
        """
        Evaluate many ``(alpha, y)`` requests concurrently.

        Results are aligned with the requests and identical to sequential evaluation.

        :raises BatchEvaluationError: listing the failed positions; successful ones stay cached.
        """
        requests = list(requests)
        if not requests:
            return []
        results = await asyncio.gather(*(self.evaluate(a, y) for a, y in requests), return_exceptions=True)
        failures = {i: r for i, r in enumerate(results) if isinstance(r, BaseException)}
        if failures:
            raise BatchEvaluationError(failures, [None if i in failures else r for i, r in enumerate(results)])
        return results

    @property
    def cost_spent(self) -> float:
        return math.fsum(record.cost for record in self._ledger.values())

    def records(self) -> list[EvalRecord]:
        return list(self._ledger.values())

    def counts(self) -> dict[str, int]:
        """
        Number of distinct evaluations per fidelity, keyed ``"1"`` or ``"1,2"``.
        """
        counter = Counter(fidelity_label(record.alpha) for record in self._ledger.values())
        return {key: counter[key] for key in sorted(counter, key=lambda k: tuple(int(p) for p in k.split(",")))}
