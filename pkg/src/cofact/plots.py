"""Line charts for the sweep and probe harnesses."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def line_chart(
    path: Path | str,
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for name, values in series.items():
        ax.plot(list(x), list(values), marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    # Date metadata is dropped so reruns write byte-identical images.
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)
