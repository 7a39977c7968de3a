import argparse
import asyncio
import logging
from pathlib import Path

import numpy as np

from src.conf.config import load_run_config, settings
from src.database.db import get_store
from src.errors import ConfigError
from src.repository import reports as repository_reports
from src.schemas import ConvergencePoint, MethodSummary, RunConfig, RunSummary
from src.services import misc as misc_engine
from src.services import srbf as srbf_engine
from src.services.models import ModelHarness, ModelSpec, build_model
from src.services.plots import convergence_svg
from src.services.stats import evaluate_chunked, qoi_distribution

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    """
    Add the ``run`` command.

    :param subparsers: Sub-command registry of the application parser.
    :return: The command parser.
    :rtype: argparse.ArgumentParser
    """
    parser = subparsers.add_parser("run", help="run MISC and/or SRBF on a model")
    parser.add_argument("--config", type=Path, required=True, help="JSON run configuration")
    parser.add_argument("--method", choices=["misc", "srbf", "both"], help="overrides the configured method")
    parser.add_argument("--budget", type=float, help="normalized cost budget of each method")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="seed of the QoI sampler")
    parser.add_argument("--svg", action="store_true", help="also write SVG convergence charts")
    parser.set_defaults(handler=handle_run)
    return parser


def apply_overrides(config: RunConfig, args) -> RunConfig:
    """
    Command-line flags take precedence over the configuration file.
    """
    update = {}
    if args.method is not None:
        update["method"] = args.method
    if args.budget is not None:
        if args.budget <= 0:
            raise ConfigError("--budget must be positive")
        update["budget"] = args.budget
    if args.out is not None:
        update["out_dir"] = args.out
    if args.seed is not None:
        update["seed"] = args.seed
    if args.svg:
        update["svg"] = True
    return config.model_copy(update=update)


def surface_raster(surrogate, model: ModelSpec, resolution: int) -> tuple[list[str], list[list[float]]]:
    """
    Surrogate on a regular raster over the first two parameters, the others at the box center.
    """
    dom = model.domain
    axes = [np.linspace(dom.lower[k], dom.upper[k], resolution) for k in range(min(2, dom.n_params))]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.tile(dom.center, (grids[0].size, 1))
    for k, grid in enumerate(grids):
        points[:, k] = grid.ravel()
    values = evaluate_chunked(surrogate, points)
    header = [f"y{k + 1}" for k in range(len(axes))] + ["value"]
    rows = [[float(points[i, k]) for k in range(len(axes))] + [float(values[i])] for i in range(len(points))]
    return header, rows


def _write_common(method: str, out: Path, config: RunConfig, model: ModelSpec, harness: ModelHarness,
                  history: list[ConvergencePoint], counts_rows: list, surrogate) -> MethodSummary:
    repository_reports.write_convergence(out / f"{method}_convergence.csv", history)
    repository_reports.write_counts(out / f"{method}_counts.csv", counts_rows)
    repository_reports.write_points(out / f"{method}_points.csv", harness.records())
    qoi = qoi_distribution(surrogate, model.domain, n=config.output.samples, seed=config.seed, output=config.output)
    repository_reports.write_histogram(out / f"{method}_histogram.csv", qoi)
    repository_reports.write_kde(out / f"{method}_kde.csv", qoi)
    header, rows = surface_raster(surrogate, model, config.output.surface_resolution)
    repository_reports.write_csv(out / f"{method}_surface.csv", header, rows)
    if config.svg:
        convergence_svg(method, history, out / f"{method}_convergence.svg")
    final = history[-1]
    if abs(final.cost - harness.cost_spent) > 1e-9 * max(1.0, harness.cost_spent):
        logger.warning("%s ledger %g differs from the logged cost %g", method, harness.cost_spent, final.cost)
    return MethodSummary(method=method, final=final, history=history, evaluations=len(harness.records()),
                         counts=harness.counts(), qoi=qoi)


async def run_misc_method(config: RunConfig, model: ModelSpec, harness: ModelHarness, out: Path) -> MethodSummary:
    cfg = config.misc if config.budget is None else config.misc.model_copy(update={"budget": config.budget})
    state = await misc_engine.run_misc(harness, cfg)
    repository_reports.write_jsonl(out / "misc_log.jsonl", state.history)
    history = [ConvergencePoint(iteration=e.iteration, cost=e.cost_spent, mean=e.estimate, std=e.std)
               for e in state.history]
    profits = [list(k) + [r.error, r.work, r.profit, int(k in state.selected), int(r.unavailable)]
               for k, r in sorted(state.records.items())]
    width = len(next(iter(state.records)))
    repository_reports.write_csv(
        out / "misc_profits.csv",
        [f"k{j + 1}" for j in range(width)] + ["error", "work", "profit", "selected", "unavailable"], profits)
    counts_rows = [(e.iteration, e.cost_spent, e.counts) for e in state.history]

    def surrogate(y):
        return misc_engine.misc_surrogate_eval(state, y, model.domain)

    return _write_common("misc", out, config, model, harness, history, counts_rows, surrogate)


async def run_srbf_method(config: RunConfig, model: ModelSpec, harness: ModelHarness, out: Path) -> MethodSummary:
    cfg = config.srbf if config.budget is None else config.srbf.model_copy(update={"budget": config.budget})
    state = await srbf_engine.run_srbf(harness, cfg, config.pso)
    repository_reports.write_jsonl(out / "srbf_log.jsonl", state.history)
    history = [ConvergencePoint(iteration=e.iteration, cost=e.cost_spent, mean=e.mean, std=e.std)
               for e in state.history]
    repository_reports.write_csv(
        out / "srbf_uncertainty.csv", ["iteration", "cost", "max_uncertainty", "max_uncertainty_pct"],
        ([e.iteration, e.cost_spent, e.max_uncertainty, e.max_uncertainty_pct] for e in state.history))
    counts_rows = [(e.iteration, e.cost_spent, e.counts) for e in state.history]

    def surrogate(y):
        return srbf_engine.mf_predict(state.mf, state.n_levels, y)

    return _write_common("srbf", out, config, model, harness, history, counts_rows, surrogate)


async def execute(config: RunConfig) -> RunSummary:
    """
    Run the configured method(s) and write every output file.

    :param config: Validated run configuration.
    :type config: RunConfig
    :return: The run summary, also written to ``summary.json``.
    :rtype: RunSummary
    """
    try:
        model = build_model(config.model)
    except ValueError as err:
        raise ConfigError(str(err))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    methods = ["misc", "srbf"] if config.method == "both" else [config.method]
    logger.info("running %s on %s, output in %s", "+".join(methods), model.name, out)
    store_dependency = get_store(settings.cache if settings.cache is not None else out / "evaluations.jsonl")
    store = next(store_dependency)
    summaries = {}
    try:
        for method in methods:
            harness = ModelHarness(model, store)
            runner = run_misc_method if method == "misc" else run_srbf_method
            summaries[method] = await runner(config, model, harness, out)
            logger.info("%s final: cost %g, mean %.10g, std %.6g", method, summaries[method].final.cost,
                        summaries[method].final.mean, summaries[method].final.std)
    finally:
        store_dependency.close()
    summary = RunSummary(model=model.name, methods=summaries)
    repository_reports.write_summary(out / "summary.json", summary)
    logger.info("wrote %s", out / "summary.json")
    return summary


def handle_run(args) -> int:
    """
    Entry point of ``run``: load the configuration, apply flags, execute.
    """
    config = apply_overrides(load_run_config(args.config), args)
    asyncio.run(execute(config))
    return 0
