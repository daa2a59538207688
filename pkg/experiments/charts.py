"""
Self-contained SVG charts for experiment reports.

Text stays as text, the date metadata is omitted and SVG ids use a fixed salt,
so identical data renders to identical files.
"""

from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "nlseg"
plt.rcParams["font.size"] = 10
plt.rcParams["figure.figsize"] = (7, 4.5)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def line_chart(
    frame: pd.DataFrame,
    x: str,
    y: str,
    group: str,
    path: Union[str, Path],
    title: str = "",
    xlabel: Optional[str] = None,
    ylabel: Optional[str] = None,
) -> Path:
    """One line per value of ``group``; points are medians over repeated x values."""
    fig, ax = plt.subplots()
    for name, part in frame.groupby(group, sort=True):
        curve = part.groupby(x, sort=True)[y].median()
        ax.plot(curve.index, curve.values, marker="o", label=str(name))
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or y)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, path)


def bar_chart(frame: pd.DataFrame, category: str, value: str, path: Union[str, Path], title: str = "") -> Path:
    """Median of ``value`` per category."""
    medians = frame.groupby(category, sort=True)[value].median().dropna()
    fig, ax = plt.subplots()
    ax.bar([str(c) for c in medians.index], medians.values, color="steelblue")
    ax.set_ylabel(value)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)
