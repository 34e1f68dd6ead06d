"""Report emission: delimited metrics/confusion/timing files, predicted label
maps, the config echo, and matplotlib renderings of each next to the CSVs.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import ingest
from .pipeline import RunReport


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def metrics_csv(report: RunReport) -> str:
    lines = ["metric,value,stddev"]
    for name in ("oa", "aa", "kappa"):
        lines.append(f"{name},{_fmt(report.mean[name])},{_fmt(report.std[name])}")
    per_class = np.array([r.metrics.per_class for r in report.results])
    for cls in range(per_class.shape[1]):
        vals = per_class[:, cls]
        vals = vals[~np.isnan(vals)]
        if vals.size:
            lines.append(f"class_{cls + 1}_accuracy,{_fmt(vals.mean())},{_fmt(vals.std())}")
        else:
            lines.append(f"class_{cls + 1}_accuracy,nan,nan")
    return "\n".join(lines) + "\n"


def confusion_csv(cm: np.ndarray) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in cm) + "\n"


def timings_csv(report: RunReport) -> str:
    lines = ["stage,seconds"]
    for stage, secs in report.stage_seconds.items():
        lines.append(f"{stage},{secs:.3f}")
    return "\n".join(lines) + "\n"


def render_label_map(labels: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5 * labels.shape[0] / max(labels.shape[1], 1)))
    ax.imshow(labels, cmap="tab20", interpolation="nearest",
              vmin=0, vmax=max(labels.max(), 1))
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_confusion(cm: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    k = cm.shape[0]
    row_sums = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, np.where(row_sums > 0, row_sums, 1), dtype=float)
    im = ax.imshow(frac, cmap="viridis", vmin=0, vmax=1)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_xticks(range(k), [str(i + 1) for i in range(k)])
    ax.set_yticks(range(k), [str(i + 1) for i in range(k)])
    fig.colorbar(im, ax=ax, label="row fraction")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_per_class(report: RunReport, path: str) -> None:
    per_class = np.array([r.metrics.per_class for r in report.results])
    means = np.nanmean(per_class, axis=0)
    k = means.shape[0]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * k), 3))
    ax.bar(np.arange(1, k + 1), 100 * means, color="tab:blue")
    ax.set_xlabel("class")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_xticks(range(1, k + 1))
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_sweep(rows: list[tuple], xlabel: str, path: str, logx: bool = False) -> None:
    xs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, [100 * r[1] for r in rows], "o-", label="OA")
    ax.plot(xs, [100 * r[2] for r in rows], "s--", label="AA")
    if logx:
        ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def sweep_csv(rows: list[tuple], param_name: str) -> str:
    lines = [f"{param_name},oa,aa"]
    for row in rows:
        lines.append(f"{_fmt(row[0])},{_fmt(row[1])},{_fmt(row[2])}")
    return "\n".join(lines) + "\n"


def emit_sweep(rows: list[tuple], param_name: str, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"sweep_{param_name}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(sweep_csv(rows, param_name))
    png_path = os.path.join(out_dir, f"sweep_{param_name}.png")
    render_sweep(rows, param_name, png_path, logx=(param_name == "threshold"))
    return [csv_path, png_path]


def emit_report(report: RunReport, out_dir: str, render_figures: bool = True) -> list[str]:
    """Write all run artifacts; returns the emitted paths.

    timings.csv carries wall-clock and is the one file expected to differ
    between otherwise identical runs.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def write(name: str, text: str) -> None:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        written.append(path)

    write("metrics.csv", metrics_csv(report))
    write("config.ini", report.config_text)
    write("timings.csv", timings_csv(report))
    for r in report.results:
        write(f"confusion_seed{r.seed}.csv", confusion_csv(r.confusion))
        map_path = os.path.join(out_dir, f"predicted_seed{r.seed}.hsl")
        ingest.save_labels(ingest.LabelMap(r.predicted), map_path)
        written.append(map_path)
    if report.failures:
        write("failures.csv", "seed,stage,message\n" + "\n".join(
            f"{f.seed},{f.stage},{f.message}" for f in report.failures) + "\n")

    if render_figures:
        for r in report.results:
            png = os.path.join(out_dir, f"predicted_seed{r.seed}.png")
            render_label_map(r.predicted, png)
            written.append(png)
            cpng = os.path.join(out_dir, f"confusion_seed{r.seed}.png")
            render_confusion(r.confusion, cpng)
            written.append(cpng)
        ppng = os.path.join(out_dir, "per_class_accuracy.png")
        render_per_class(report, ppng)
        written.append(ppng)
    return written
