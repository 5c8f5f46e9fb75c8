"""Figure rendering for evaluation reports.

Figures accompany the delimited plot-data files: ground truth in red,
prediction in blue, and (for conditional attention models) the per-frame
attention weight in a lower panel.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_STYLE = {
    "figure.figsize": (9.0, 3.2),
    "figure.dpi": 110,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "savefig.bbox": "tight",
}


def render_prediction_figure(
    path,
    label: np.ndarray,
    prediction: np.ndarray,
    lam: np.ndarray | None = None,
    title: str = "",
    frame_period_ms: float = 40.0,
) -> None:
    """Write one recording's prediction-vs-label figure to ``path``."""
    seconds = np.arange(len(label)) * frame_period_ms / 1000.0
    with plt.rc_context(_STYLE):
        if lam is not None:
            fig, (ax, ax_lam) = plt.subplots(
                2, 1, sharex=True, figsize=(9.0, 4.4),
                gridspec_kw={"height_ratios": [2.2, 1.0]},
            )
        else:
            fig, ax = plt.subplots()
            ax_lam = None
        ax.plot(seconds, label, color="red", label="ground truth")
        ax.plot(seconds, prediction, color="blue", label="prediction")
        ax.set_ylabel("annotation")
        ax.set_ylim(-1.05, 1.05)
        ax.legend(loc="upper right")
        if title:
            ax.set_title(title)
        if ax_lam is not None:
            ax_lam.plot(seconds, lam, color="darkgreen")
            ax_lam.set_ylabel("audio weight")
            ax_lam.set_ylim(0.0, 1.0)
            ax_lam.set_xlabel("time (s)")
        else:
            ax.set_xlabel("time (s)")
        fig.savefig(path)
        plt.close(fig)
