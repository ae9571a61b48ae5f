"""Line charts of sweep CSVs: one series per persistence mode."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from nvtraverse.harness.sweep import read_csv  # noqa: E402

AXIS_LABELS = {"size": "key range r", "threads": "threads", "update": "update %"}
ORDER = ("none", "nvtraverse", "izraelevitz")


def series(rows) -> dict[str, list[tuple[int, float, float]]]:
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r.persist, []).append((r.value, r.flushes_per_op, r.fences_per_op))
    for pts in out.values():
        pts.sort()
    return dict(sorted(out.items(), key=lambda kv: ORDER.index(kv[0]) if kv[0] in ORDER else len(ORDER)))


def figure(rows):
    """Two panels, flushes/op and fences/op against the swept variable."""
    if not rows:
        raise ValueError("nothing to plot")
    axis = rows[0].axis
    data = series(rows)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, idx, title in ((axes[0], 1, "flushes / op"), (axes[1], 2, "fences / op")):
        for persist, pts in data.items():
            ax.plot([p[0] for p in pts], [p[idx] for p in pts], marker="o", label=persist)
        if axis == "size" and len({p[0] for pts in data.values() for p in pts}) > 1:
            ax.set_xscale("log", base=2)
        if any(p[idx] > 0 for pts in data.values() for p in pts):
            ax.set_yscale("symlog", linthresh=1)  # "none" sits at zero
        ax.set_xlabel(AXIS_LABELS.get(axis, axis))
        ax.set_ylabel(title)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    return fig


def plot(csv_path: str | Path, out_path: str | Path) -> Path:
    """Render a sweep CSV to ``out_path`` (format from its suffix)."""
    fig = figure(read_csv(csv_path))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out
