"""Figures and matching plot-data tables for experiment reports.

Every ``plot_data`` row carries ``series``, ``x`` and ``y`` so the CSV can
redraw the figure with any tool. Figures use the non-interactive Agg backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (7.0, 4.2),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.frameon": False,
}


def plot_data(report: dict) -> list[dict]:
    """Long-format (series, x, y) rows for the report's figure."""
    kind = report["experiment"]
    out = []
    if kind == "proxy":
        for r in report["rows"]:
            if r["ndcg"] is not None:
                out.append(dict(series=f"{r['method']}/{r['group']}", x=r["strategy"], y=r["ndcg"]))
    elif kind == "noise":
        for name, d in report["detection"].items():
            if d is not None:
                out.append(dict(series="auc", x=name, y=d["auc"]))
        rem = report.get("removal")
        if rem:
            for target in ("on_point", "on_test"):
                for order in ("influence", "random"):
                    curves = np.array([c[order][target] for c in rem["curves"]])
                    for b, v in enumerate(curves.mean(axis=0), start=1):
                        out.append(dict(series=f"{order}/{target}", x=b, y=float(v)))
    elif kind == "mismatch":
        for r in report["rows"]:
            if r["mean"] is not None:
                out.append(dict(series=r["method"], x=r["group"], y=r["mean"]))
    elif kind == "bench":
        for r in report["rows"]:
            series = r["method"] + (" (vectorized)" if r["vectorized"] else "")
            out.append(dict(series=series, x=r["strategy"], y=r["seconds_per_object"]))
    else:
        raise ValueError(f"unknown experiment kind {kind!r}")
    return out


def _grouped_bars(ax, rows, ylabel):
    xs = list(dict.fromkeys(r["x"] for r in rows))
    series = list(dict.fromkeys(r["series"] for r in rows))
    width = 0.8 / max(len(series), 1)
    for s_idx, s in enumerate(series):
        vals = {r["x"]: r["y"] for r in rows if r["series"] == s}
        pos = np.arange(len(xs)) + (s_idx - (len(series) - 1) / 2) * width
        ax.bar(pos, [vals.get(x, np.nan) for x in xs], width, label=s)
    ax.set_xticks(np.arange(len(xs)))
    ax.set_xticklabels([str(x) for x in xs], rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, ncol=2)


def figure(report: dict):
    """Build the report's figure; caller owns (and closes) it."""
    rows = plot_data(report)
    kind = report["experiment"]
    with plt.rc_context(STYLE):
        if kind == "noise" and report.get("removal"):
            fig, axes = plt.subplots(1, 3, figsize=(13, 4.2))
            auc_rows = [r for r in rows if r["series"] == "auc"]
            axes[0].bar([r["x"] for r in auc_rows], [r["y"] for r in auc_rows], color="tab:blue")
            axes[0].axhline(0.5, color="grey", ls="--", lw=1)
            axes[0].tick_params(axis="x", rotation=60, labelsize=7)
            axes[0].set_ylabel("ROC AUC (flipped vs clean)")
            for ax, target, title in ((axes[1], "on_point", "test point"), (axes[2], "on_test", "whole test set")):
                for order, color in (("influence", "tab:red"), ("random", "tab:grey")):
                    pts = [r for r in rows if r["series"] == f"{order}/{target}"]
                    ax.plot([r["x"] for r in pts], [r["y"] for r in pts], marker="o", color=color, label=order)
                ax.set_xlabel("batches removed")
                ax.set_ylabel(f"relative loss reduction ({title})")
                ax.legend()
        else:
            fig, ax = plt.subplots()
            if kind == "proxy":
                _grouped_bars(ax, rows, "NDCG")
                ax.set_xlabel("update set")
            elif kind == "noise":
                ax.bar([r["x"] for r in rows], [r["y"] for r in rows], color="tab:blue")
                ax.axhline(0.5, color="grey", ls="--", lw=1)
                ax.tick_params(axis="x", rotation=60, labelsize=7)
                ax.set_ylabel("ROC AUC (flipped vs clean)")
            elif kind == "mismatch":
                _grouped_bars(ax, rows, "mean influence on focus test rows")
                ax.axhline(0.0, color="black", lw=0.8)
            else:
                for s in dict.fromkeys(r["series"] for r in rows):
                    pts = [r for r in rows if r["series"] == s]
                    ax.plot([r["x"] for r in pts], [r["y"] for r in pts], marker="o", label=s)
                ax.set_yscale("log")
                ax.set_xlabel("update set")
                ax.set_ylabel("seconds per training object")
                ax.legend(fontsize=7)
        fig.tight_layout()
    return fig
