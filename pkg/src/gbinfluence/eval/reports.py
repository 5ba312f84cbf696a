"""Write experiment reports: JSON (full), CSV (rows), plot-data CSV and PNG."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from ..modelio import atomic_write_text
from . import plots


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def rows_to_csv(rows) -> str:
    """CSV text with the union of keys as header, in first-seen order."""
    header = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in header})
    return buf.getvalue()


def _save_figure(fig, path: Path):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(report: dict, out_dir, stem: str | None = None, figures: bool = True) -> dict:
    """Write ``<stem>.json``, ``<stem>.csv``, ``<stem>_plot.csv`` and ``<stem>.png``.

    Returns the written paths keyed by kind. Each file is written to a
    temporary sibling and renamed into place.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or report["experiment"]
    paths = {
        "json": out_dir / f"{stem}.json",
        "csv": out_dir / f"{stem}.csv",
        "plot_csv": out_dir / f"{stem}_plot.csv",
    }
    atomic_write_text(paths["json"], json.dumps(_plain(report), indent=2, allow_nan=False) + "\n")
    atomic_write_text(paths["csv"], rows_to_csv(_plain(report["rows"])))
    atomic_write_text(paths["plot_csv"], rows_to_csv(plots.plot_data(report)))
    if figures:
        import matplotlib.pyplot as plt

        fig = plots.figure(report)
        try:
            paths["png"] = out_dir / f"{stem}.png"
            _save_figure(fig, paths["png"])
        finally:
            plt.close(fig)
    return {k: str(v) for k, v in paths.items()}
