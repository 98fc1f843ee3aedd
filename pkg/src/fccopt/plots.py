"""Figure rendering for harness reports.

Every figure lands next to the delimited output it illustrates, rendered
through the Agg backend so runs need no display.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_curves(
    path,
    curves: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    *,
    title: str,
    xlabel: str = "iteration",
    ylabel: str = "training objective",
) -> None:
    """Render labeled (x, y) series to one PNG."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, xs, ys in curves:
        ax.plot(xs, ys, label=label, linewidth=1.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_points(
    path,
    xs: Sequence[float],
    ys: Sequence[float],
    *,
    title: str,
    xlabel: str,
    ylabel: str,
) -> None:
    """Render one marker-and-line series to a PNG."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
