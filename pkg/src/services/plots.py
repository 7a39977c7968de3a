"""
Optional SVG line charts of the convergence history.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.schemas import ConvergencePoint  # noqa: E402

# identical element ids and no timestamp, so reruns give the same bytes
matplotlib.rcParams["svg.hashsalt"] = "mfuq"


def convergence_svg(method: str, history: list[ConvergencePoint], path: Path) -> Path:
    """
    Mean and standard deviation against normalized cost, two stacked panels.

    :param method: Method label used in the title.
    :type method: str
    :param history: Convergence points in iteration order.
    :type history: list[ConvergencePoint]
    :param path: Target SVG file.
    :type path: Path
    :return: The written path.
    :rtype: Path
    """
    cost = [p.cost for p in history]
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
    top.plot(cost, [p.mean for p in history], marker="o", markersize=3)
    top.set_ylabel("E[G]")
    top.set_title(f"{method.upper()} convergence")
    bottom.plot(cost, [p.std for p in history], marker="o", markersize=3, color="tab:orange")
    bottom.set_ylabel("std[G]")
    bottom.set_xlabel("normalized cost")
    for ax in (top, bottom):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
