"""Plain-text metric tables and optional plots."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .metrics import DetectionMetrics, GraspMetrics
from .sweeps import StrategyRow, SweepReport


def fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_table(path, header, rows) -> str:
    text = to_csv(header, rows)
    Path(path).write_text(text)
    return text


def detection_table(m: DetectionMetrics, images: int):
    header = ["images", "tp", "fp", "fn", "precision", "recall", "f1", "iou_det", "iou_seg"]
    return header, [[images, m.tp, m.fp, m.fn, m.precision, m.recall, m.f1, m.iou_det, m.iou_seg]]


def grasp_table(rows: list[tuple[str, GraspMetrics]]):
    header = ["method", "n", "rmse_centre_cm", "rmse_angular_deg"]
    return header, [[name, m.n, m.rmse_centre, m.rmse_angular] for name, m in rows]


def sweep_table(reports: list[SweepReport]):
    header = ["axis", "distance_m", "value", "n", "rmse_centre_cm", "rmse_angular_deg"]
    rows = []
    for r in reports:
        for c in r.cells:
            rows.append([r.axis, r.distance if r.distance is not None else "", c.value, c.n,
                         c.metrics.rmse_centre, c.metrics.rmse_angular])
    return header, rows


def strategy_table(rows: list[StrategyRow]):
    header = ["strategy", "scenes", "fruits", "num_obs", "n", "rmse_centre_cm", "rmse_ori_deg", "success_rate"]
    return header, [[r.strategy, r.scenes, r.fruits, r.num_obs, r.metrics.n, r.metrics.rmse_centre,
                     r.metrics.rmse_angular, r.success_rate] for r in rows]


def plot_sweeps(path, reports: list[SweepReport]) -> None:
    """Two panels (centre cm, angle deg) with one line per report; needs matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for r in reports:
        label = r.axis if r.distance is None else f"{r.axis} @ {r.distance:g} m"
        xs = [c.value for c in r.cells]
        axes[0].plot(xs, r.series("rmse_centre"), marker="o", label=label)
        axes[1].plot(xs, r.series("rmse_angular"), marker="o", label=label)
    axes[0].set_ylabel("centre RMSE (cm)")
    axes[1].set_ylabel("angular RMSE (deg)")
    for ax in axes:
        ax.set_xlabel(reports[0].axis.replace("_", " ") if reports else "")
        ax.grid(alpha=0.3)
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
