"""PNG renderings of chart data, score sets, alignments and spectrograms.

Uses the non-interactive Agg backend; files carry no timestamp metadata,
so identical inputs give identical bytes.
"""

from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "grid.linestyle": "--",
    "grid.alpha": 0.5,
    "figure.dpi": 100,
}

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_META, bbox_inches="tight")
    plt.close(fig)
    return path


def bar_chart(rows: Sequence[Tuple[str, str, float]], path, metric: str) -> Path:
    """One bar per system for ``metric`` (rows are ``system, metric, value``)."""
    picked = [(s, float(v)) for s, m, v in rows if m == metric]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        x = np.arange(len(picked))
        bars = ax.bar(x, [v for _, v in picked], color="#5a8fc2", edgecolor="black", linewidth=0.6)
        for b, (_, v) in zip(bars, picked):
            ax.annotate(f"{v:.2f}", (b.get_x() + b.get_width() / 2, b.get_height()),
                        ha="center", va="bottom", fontsize=8)
        ax.set_xticks(x)
        ax.set_xticklabels([s for s, _ in picked])
        ax.set_ylabel(metric)
        ax.yaxis.grid(True)
        return _save(fig, path)


def score_plot(values: Sequence[float], path, ylabel: str = "score", mean: float = None) -> Path:
    """Per-item scores as steps, with an optional mean line."""
    v = np.asarray(values, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 2.8))
        ax.fill_between(np.arange(v.size), v, step="post", color="#9fd39f", edgecolor="black", lw=0.6)
        if mean is not None:
            ax.axhline(mean, color="firebrick", lw=1.0, label=f"mean {mean:.2f}")
            ax.legend(frameon=False, loc="upper right")
        ax.set_xlabel("item")
        ax.set_ylabel(ylabel)
        ax.yaxis.grid(True)
        return _save(fig, path)


def alignment_image(a: np.ndarray, path, title: str = "") -> Path:
    """Encoder steps on y, decoder steps on x, as in the usual alignment plots."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        im = ax.imshow(np.asarray(a).T, aspect="auto", origin="lower", interpolation="none")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("decoder step")
        ax.set_ylabel("encoder step")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def spectrogram_image(values: np.ndarray, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        im = ax.imshow(np.asarray(values).T, aspect="auto", origin="lower", interpolation="none", cmap="magma")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("frame")
        ax.set_ylabel("bin")
        if title:
            ax.set_title(title)
        return _save(fig, path)
