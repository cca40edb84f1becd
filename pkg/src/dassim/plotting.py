"""Figures for run and sweep reports (rendered off-screen to PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (6.4, 4.0),
    "savefig.dpi": 120,
}

THEORY_COLOR = "tab:green"
MISSING_COLOR = "tab:purple"

# PNG metadata normally embeds the matplotlib version; drop it so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_missing(metrics, path, title: str = "") -> None:
    """Missing custody samples against time, with the theoretical total as reference."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.axhline(metrics.theoretical_total, color=THEORY_COLOR, label="theoretical total")
        ax.plot(metrics.times_ms, metrics.missing, color=MISSING_COLOR, label="missing samples")
        ax.set_xlabel("slot time (ms)")
        ax.set_ylabel("samples missing from custody")
        ax.set_ylim(bottom=0)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(rows, path) -> None:
    """Observed against theoretical delivered samples, one point per sweep run.

    ``rows`` are summary records carrying ``custody_row``, ``custody_col``,
    ``observed`` and ``theoretical``.
    """
    rows = list(rows)
    labels = [f"{r['custody_row']}/{r['custody_col']}" for r in rows]
    x = range(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(x, [r["theoretical"] for r in rows], "o-", color=THEORY_COLOR, label="theoretical")
        ax.plot(x, [r["observed"] for r in rows], "x", color=MISSING_COLOR, markersize=9,
                label="observed")
        ax.set_xticks(list(x), labels, rotation=45)
        ax.set_yscale("log")
        ax.set_xlabel("custody rows/columns per validator")
        ax.set_ylabel("delivered samples")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
