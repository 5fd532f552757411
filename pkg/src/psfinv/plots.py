"""Deterministic SVG figures (fixed hash salt, no date metadata)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "psfinv", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def line_plot(x, series: dict[str, np.ndarray], path, xlabel: str, logy: bool = True, title: str = "") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for name, y in series.items():
            ax.plot(x, y, marker="o", label=name)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def correlation_heatmap(cm, path, title: str = "") -> None:
    with plt.rc_context(_RC):
        n = len(cm.labels)
        fig, ax = plt.subplots(figsize=(1.0 + 0.9 * n, 0.8 + 0.8 * n))
        ax.imshow(cm.values, vmin=-1, vmax=1, cmap="RdBu_r")
        ax.set_xticks(range(n), cm.labels, rotation=45, ha="right")
        ax.set_yticks(range(n), cm.labels)
        for i in range(n):
            for j in range(n):
                ax.text(j, i, f"{cm.values[i, j]:.2f}", ha="center", va="center")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def bar_chart(labels, values, path, ylabel: str, title: str = "") -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.bar(range(len(values)), values)
        ax.set_xticks(range(len(values)), labels)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
