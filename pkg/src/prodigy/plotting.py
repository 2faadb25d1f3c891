"""Accuracy curves over shots or pretraining steps, always paired with a CSV."""

from __future__ import annotations

import csv
from pathlib import Path

from .evaluation import EvalReport

CURVES = {"shots_curve": ("k", "shots per class"),
          "steps_curve": ("checkpoint_step", "pretraining steps")}


class PlotError(ValueError):
    pass


def curve_points(kind: str, reports) -> list[tuple[float, float, float]]:
    """``(x, mean, stderr)`` sorted by x; all reports must share the same m."""
    if kind not in CURVES:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {', '.join(CURVES)}")
    if len(reports) < 2:
        raise PlotError(f"a curve needs at least 2 reports, got {len(reports)}")
    ways = {r.config.get("m") for r in reports}
    if len(ways) != 1:
        raise PlotError(f"reports mix different m values {sorted(map(str, ways))}; "
                        "curves must hold m fixed")
    key = CURVES[kind][0]
    pts = []
    for r in reports:
        if r.config.get(key) is None:
            raise PlotError(f"report config has no {key!r} field for the x axis")
        pts.append((float(r.config[key]), r.mean, r.stderr))
    return sorted(pts)


def plot_curve(kind: str, report_paths, out_path) -> Path:
    """Render the curve to ``out_path`` and its points to ``out_path`` with a .csv suffix."""
    reports = [EvalReport.load(p) for p in report_paths]
    pts = curve_points(kind, reports)
    out = Path(out_path)
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "mean_accuracy", "stderr"])
        w.writerows(pts)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs, ys, es = (list(c) for c in zip(*pts))
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(xs, ys, marker="o")
    ax.fill_between(xs, [y - e for y, e in zip(ys, es)], [y + e for y, e in zip(ys, es)],
                    alpha=0.25)
    ax.set_xlabel(CURVES[kind][1])
    ax.set_ylabel("accuracy")
    ax.set_title(f"{reports[0].config.get('m')}-way")
    fig.tight_layout()
    fig.savefig(out, metadata={"Date": None} if out.suffix in (".svg", ".pdf") else None)
    plt.close(fig)
    return csv_path
