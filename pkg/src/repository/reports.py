import csv
import json
from pathlib import Path
from typing import Iterable, List, Sequence

from pydantic import BaseModel, ValidationError

from src.errors import SchemaMismatchError
from src.schemas import ConvergencePoint, EvalRecord, QoiSummary, RunSummary


def fmt(value) -> str:
    """
    Shortest float text that round-trips; ints and strings pass through.
    """
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """
    Writes a UTF-8 CSV table with ``\\n`` line endings.

    :param path: Target file.
    :type path: Path
    :param header: Column names.
    :type header: Sequence[str]
    :param rows: Table rows.
    :type rows: Iterable[Sequence]
    :return: The written path.
    :rtype: Path
    """
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return Path(path)


def write_jsonl(path: Path, records: Iterable[BaseModel]) -> Path:
    """
    Writes one JSON document per line.
    """
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.model_dump_json() + "\n")
    return Path(path)


def write_convergence(path: Path, history: List[ConvergencePoint]) -> Path:
    return write_csv(path, ["iteration", "cost", "mean", "std"],
                     ([p.iteration, p.cost, p.mean, p.std] for p in history))


def _label_key(label: str):
    return tuple(int(p) for p in label.split(","))


def write_counts(path: Path, rows: List[tuple[int, float, dict]]) -> Path:
    """
    Writes simulation counts per fidelity at every iteration.

    :param rows: (iteration, cost, counts keyed by fidelity label) per iteration.
    :type rows: List[tuple[int, float, dict]]
    """
    labels = sorted({label for _, _, counts in rows for label in counts}, key=_label_key)
    header = ["iteration", "cost"] + [f"n[{label}]" for label in labels]
    return write_csv(path, header, ([it, cost] + [counts.get(label, 0) for label in labels]
                                    for it, cost, counts in rows))


def write_points(path: Path, records: List[EvalRecord]) -> Path:
    """
    Writes every real evaluation: parameter coordinates, fidelity components and value.
    """
    if not records:
        return write_csv(path, ["value"], [])
    n, d = len(records[0].y), len(records[0].alpha)
    header = [f"y{k + 1}" for k in range(n)] + [f"alpha{k + 1}" for k in range(d)] + ["value"]
    ordered = sorted(records, key=lambda r: (r.alpha, r.y))
    return write_csv(path, header, (list(r.y) + list(r.alpha) + [r.value] for r in ordered))


def write_histogram(path: Path, qoi: QoiSummary) -> Path:
    edges = qoi.histogram_edges
    return write_csv(path, ["left", "right", "count", "density"],
                     ([edges[i], edges[i + 1], qoi.histogram_counts[i], qoi.histogram_density[i]]
                      for i in range(len(qoi.histogram_counts))))


def write_kde(path: Path, qoi: QoiSummary) -> Path:
    return write_csv(path, ["x", "density"], qoi.kde)


def write_summary(path: Path, summary: RunSummary) -> Path:
    """
    Writes the machine-readable run summary.

    :param path: Target file.
    :type path: Path
    :param summary: Per-method final values and histories.
    :type summary: RunSummary
    :return: The written path.
    :rtype: Path
    """
    Path(path).write_text(json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return Path(path)


def load_summary(path: Path) -> RunSummary:
    """
    Reads a run summary.

    :param path: Summary file written by ``run``.
    :type path: Path
    :return: The summary.
    :rtype: RunSummary
    :raises SchemaMismatchError: if the file is not a summary of the supported schema version.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise SchemaMismatchError(f"{path}: not a readable summary ({err})")
    if not isinstance(data, dict) or data.get("schema_version") != 1:
        version = data.get("schema_version") if isinstance(data, dict) else None
        raise SchemaMismatchError(f"{path}: unsupported schema version {version!r}")
    try:
        return RunSummary.model_validate(data)
    except ValidationError as err:
        first = err.errors()[0]
        raise SchemaMismatchError(f"{path}: {'.'.join(str(p) for p in first['loc'])}: {first['msg']}")


class ComparisonRow(BaseModel):
    source: str
    method: str
    snapshot: str
    iteration: int
    cost: float
    mean: float
    std: float


def _intermediate(history: List[ConvergencePoint], iteration: int | None) -> ConvergencePoint:
    if iteration is None:
        return history[(len(history) - 1) // 2]
    earlier = [p for p in history if p.iteration <= iteration]
    return earlier[-1] if earlier else history[0]


def compare_table(summaries: List[tuple[str, RunSummary]], iteration: int | None = None) -> List[ComparisonRow]:
    """
    Aligns the intermediate and final snapshots of every method of every summary.

    :param summaries: (source name, summary) pairs.
    :type summaries: List[tuple[str, RunSummary]]
    :param iteration: Iteration of the intermediate snapshot; the middle of each history by default.
    :type iteration: int | None
    :return: Two rows per method, intermediate first.
    :rtype: List[ComparisonRow]
    """
    rows = []
    for source, summary in summaries:
        for method in sorted(summary.methods):
            entry = summary.methods[method]
            history = entry.history or [entry.final]
            for label, point in (("intermediate", _intermediate(history, iteration)), ("final", entry.final)):
                rows.append(ComparisonRow(source=source, method=method, snapshot=label, iteration=point.iteration,
                                          cost=point.cost, mean=point.mean, std=point.std))
    return rows


def format_table(rows: List[ComparisonRow]) -> str:
    """
    Renders comparison rows as an aligned plain-text table.
    """
    header = ["source", "method", "snapshot", "iteration", "cost", "mean", "std"]
    body = [[r.source, r.method, r.snapshot, str(r.iteration), f"{r.cost:g}", f"{r.mean:.6g}", f"{r.std:.6g}"]
            for r in rows]
    widths = [max(len(line[k]) for line in [header] + body) for k in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in [header] + body]
    return "\n".join(lines)
