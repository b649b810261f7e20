"""
Static SVG charts for sweep reports.

Charts are pure functions of the report: a fixed hash salt, no date metadata
and text kept as text make the SVG bytes reproducible.
"""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from .errors import IoFailure

_SVG_RC = {
    "svg.hashsalt": "hyperspectral-sweep",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig: Figure, path: str) -> None:
    try:
        with matplotlib.rc_context(_SVG_RC):
            fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise IoFailure(f"cannot write chart {path}: {e}")


def envelope_chart(report, path: str) -> None:
    """Mean +/- std of ROI peak scores for confirmed targets and non-targets per k."""
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(6.4, 4.0))
        ax = fig.add_subplot(1, 1, 1)
        ks = np.array([e.k for e in report.per_k], dtype=float)
        for label, mean_attr, std_attr, color in (
            ("targets", "target_mean", "target_std", "tab:blue"),
            ("non-targets", "nontarget_mean", "nontarget_std", "tab:red"),
        ):
            mean = np.array([getattr(e, mean_attr) for e in report.per_k], dtype=float)
            std = np.array([getattr(e, std_attr) for e in report.per_k], dtype=float)
            ax.plot(ks, mean, marker="o", markersize=3, color=color, label=label)
            ax.fill_between(ks, mean - std, mean + std, color=color, alpha=0.2, linewidth=0)
        failed = [e.k for e in report.per_k if e.failure]
        for k in failed:
            ax.axvline(k, color="0.5", linestyle=":", linewidth=1)
        ax.set_xlabel("retained principal components (k)")
        ax.set_ylabel("ROI peak ACE score")
        ax.set_ylim(-1.05, 1.05)
        ax.legend(loc="lower right")
        fig.tight_layout()
    _save(fig, path)


def tracks_chart(tracks: Sequence, ks: Sequence[int], path: str, nontarget_tracks: Sequence = ()) -> None:
    """Peak score per tracked object across k; unmatched ranks are gaps.

    Non-target objects are drawn as thin dashed grey traces without legend entries.
    """
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(6.4, 4.0))
        ax = fig.add_subplot(1, 1, 1)
        x = np.array(list(ks), dtype=float)
        for t in tracks:
            y = np.array(
                [h.peak_score if h.matched else np.nan for h in t.per_k_hits],
                dtype=float,
            )
            ax.plot(x, y, marker=".", markersize=3, linewidth=1, label=f"{t.object_id} {t.target_name}")
        for t in nontarget_tracks:
            y = np.array([h.peak_score if h.matched else np.nan for h in t.per_k_hits], dtype=float)
            ax.plot(x, y, color="0.6", linestyle="--", linewidth=0.6)
        ax.set_xlabel("retained principal components (k)")
        ax.set_ylabel("matched ROI peak ACE score")
        ax.set_ylim(-0.05, 1.05)
        if x.size:
            ax.set_xlim(x.min() - 1, x.max() + 1)
        if 0 < len(tracks) <= 12:
            ax.legend(loc="lower right", fontsize=6, ncol=2)
        fig.tight_layout()
    _save(fig, path)


__all__ = ["envelope_chart", "tracks_chart"]
