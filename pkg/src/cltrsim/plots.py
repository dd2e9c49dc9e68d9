"""Per-cell bar charts of normalized increase rate."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

NINC_FLOOR = -0.2
REQUIRED = {"model", "fraction", "simulator", "sessions", "seed", "ninc"}


class ReportFormatError(ValueError):
    pass


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not REQUIRED <= set(reader.fieldnames):
            missing = REQUIRED - set(reader.fieldnames or [])
            raise ReportFormatError(f"report {path} lacks columns {sorted(missing)}")
        rows = list(reader)
    for i, r in enumerate(rows, start=2):
        try:
            float(r["ninc"])
        except (TypeError, ValueError):
            raise ReportFormatError(f"{path}:{i}: ninc {r['ninc']!r} is not a number") from None
    return rows


def cell_label(row: dict) -> str:
    return f"seed{row['seed']}_pr{row['fraction']}_{row['simulator']}_s{row['sessions']}"


def plot_cell(label: str, models: Sequence[str], ninc: Sequence[float], path: Path) -> None:
    plt.rcParams["svg.hashsalt"] = "cltrsim"
    fig, ax = plt.subplots(figsize=(6, 0.35 * max(len(models), 3) + 1.2))
    ax.axvline(0.0, color="tab:red", ls="--", lw=1, label="production ranker")
    ax.axvline(1.0, color="tab:green", ls="--", lw=1, label="skyline")
    if not models:
        ax.text(0.5, 0.5, "no data", transform=ax.transAxes, ha="center", va="center")
        ax.set_yticks([])
    else:
        shown = [max(v, NINC_FLOOR) for v in ninc]
        y = range(len(models))
        ax.barh(list(y), [v - NINC_FLOOR for v in shown], left=NINC_FLOOR, color="tab:blue")
        ax.set_yticks(list(y), list(models))
        ax.invert_yaxis()
        for yi, raw in zip(y, ninc):
            if raw < NINC_FLOOR:
                ax.annotate(f"{raw:.2f}", (NINC_FLOOR, yi), xytext=(3, 0),
                            textcoords="offset points", va="center", fontsize=7, color="black")
    ax.set_xlim(NINC_FLOOR, max([1.1, *[v + 0.05 for v in ninc if math.isfinite(v)]]))
    ax.set_xlabel("nInc (nDCG@5)")
    ax.set_title(label, fontsize=9)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    data = buf.getvalue()
    if path.is_file() and path.read_bytes() == data:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def emit_plots(report_csv: str | Path, out_dir: str | Path, cells: Sequence[str] | None = None) -> list[Path]:
    """One SVG per (seed, fraction, simulator, sessions) cell of the report.

    ``cells`` lists cell labels that must get a chart even without rows.
    """
    rows = read_report(report_csv)
    by_cell: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for r in rows:
        if r["simulator"] == "-":
            continue
        v = float(r["ninc"])
        if math.isfinite(v):
            by_cell[cell_label(r)].append((r["model"], v))
    labels = list(dict.fromkeys([*(cells or []), *by_cell]))
    out = Path(out_dir)
    paths = []
    for label in labels:
        entries = by_cell.get(label, [])
        p = out / f"{label}.svg"
        plot_cell(label, [m for m, _ in entries], [v for _, v in entries], p)
        paths.append(p)
    return paths
