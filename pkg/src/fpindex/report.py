"""Figures written next to the CSV outputs."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import PrErCurve  # noqa: E402


def plot_pr_er(curves: Sequence[tuple[str, PrErCurve]], path: str | os.PathLike, title: str = "") -> None:
    """Error rate against penetration rate, one line per labelled curve."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for label, curve in curves:
        ax.plot([100 * p for p in curve.penetration], [100 * e for e in curve.error], marker="o", ms=3, label=label)
    ax.set_xlabel("Penetration rate (%)")
    ax.set_ylabel("Error rate (%)")
    ax.set_xlim(0, 100)
    ax.set_ylim(0, 100)
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    if any(label for label, _ in curves):
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
