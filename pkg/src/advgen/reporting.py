"""Report writers: CSV/JSON tables plus rendered matplotlib figures.

Every report path writes the delimited output and a PNG figure next to it.
Exported image pairs are saved as lossless PNG (lossy formats would corrupt
the quality metrics).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from advgen.evaluation import AttackReport, TransferCell


def _flatten_report(report: AttackReport) -> dict:
    row = {
        "target": report.target_id,
        "dataset": report.dataset_id,
        "task": report.task,
        "delta": report.delta,
    }
    for key in report.clean:
        row[f"clean_{key}"] = report.clean[key]
        row[f"attacked_{key}"] = report.attacked[key]
        row[f"degradation_{key}"] = report.degradation[key]
    row.update({f"iqa_{k}": v for k, v in report.iqa.items()})
    row["fps"] = report.fps
    return row


def write_attack_reports(reports: list[AttackReport], out_dir, stem="attack_report"):
    """CSV + JSON (field-for-field identical) + before/after bar figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [_flatten_report(r) for r in reports]
    columns = sorted({k for row in rows for k in row}, key=lambda k: (k not in ("target", "dataset", "task"), k))
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / f"{stem}.json").write_text(json.dumps(rows, indent=2, default=float) + "\n")
    _plot_reports(reports, out_dir / f"{stem}.png")
    return csv_path


def _plot_reports(reports, path):
    metrics = sorted({k for r in reports for k in r.clean})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        names, clean, attacked = [], [], []
        for r in reports:
            if metric in r.clean:
                names.append(f"{r.target_id}\n{r.dataset_id}")
                clean.append(r.clean[metric])
                attacked.append(r.attacked[metric])
        x = np.arange(len(names))
        ax.bar(x - 0.2, clean, width=0.4, label="clean")
        ax.bar(x + 0.2, attacked, width=0.4, label="attacked")
        ax.set_xticks(x)
        ax.set_xticklabels(names, fontsize=8)
        ax.set_ylabel(f"{metric} (%)")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_transfer_cells(cells: list[TransferCell], out_dir, stem="transfer"):
    """CSV + JSON + plain-text grid + heatmap figure of degradations."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in cells:
        row = {
            "train_target": c.train_target,
            "eval_target": c.eval_target,
            "train_dataset": c.train_dataset,
            "eval_dataset": c.eval_dataset,
        }
        for key in c.clean:
            row[f"clean_{key}"] = c.clean[key]
            row[f"attacked_{key}"] = c.attacked[key]
            row[f"degradation_{key}"] = c.degradation[key]
        rows.append(row)
    columns = list(rows[0]) if rows else []
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    (out_dir / f"{stem}.json").write_text(json.dumps(rows, indent=2, default=float) + "\n")
    (out_dir / f"{stem}.txt").write_text(render_transfer_grid(cells))
    _plot_transfer(cells, out_dir / f"{stem}.png")
    return csv_path


def render_transfer_grid(cells: list[TransferCell]) -> str:
    """Plain-text grid: one line per cell, metric -> attacked (drop)."""
    lines = []
    for c in cells:
        parts = []
        for key in c.attacked:
            parts.append(f"{key}={c.attacked[key]:.1f} ({c.degradation[key]:.1f} down)")
        lines.append(
            f"{c.train_target}/{c.train_dataset} -> {c.eval_target}/{c.eval_dataset}: "
            + ", ".join(parts)
        )
    return "\n".join(lines) + "\n"


def _plot_transfer(cells, path):
    if not cells:
        return
    metric = sorted(cells[0].degradation)[0]
    rows = sorted({f"{c.train_target}/{c.train_dataset}" for c in cells})
    cols = sorted({f"{c.eval_target}/{c.eval_dataset}" for c in cells})
    grid = np.full((len(rows), len(cols)), np.nan)
    for c in cells:
        i = rows.index(f"{c.train_target}/{c.train_dataset}")
        j = cols.index(f"{c.eval_target}/{c.eval_dataset}")
        grid[i, j] = c.degradation.get(metric, np.nan)
    fig, ax = plt.subplots(figsize=(1.2 * len(cols) + 3, 1.0 * len(rows) + 2))
    im = ax.imshow(grid, cmap="viridis")
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels(cols, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(rows, fontsize=8)
    ax.set_xlabel("evaluated on")
    ax.set_ylabel("trained against")
    fig.colorbar(im, ax=ax, label=f"{metric} degradation (points)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(csv_path, out_path, phase_boundary_epoch=None):
    """Render the training loss CSV as a per-step curve with the phase boundary."""
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    steps = np.arange(data.size)
    for column in ("angular", "norm", "frobenius", "total"):
        ax.plot(steps, data[column], label=column, linewidth=0.8)
    if phase_boundary_epoch is not None:
        boundary = np.searchsorted(data["epoch"], phase_boundary_epoch)
        if 0 < boundary < data.size:
            ax.axvline(boundary, color="gray", linestyle="--", label="phase boundary")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss (batch sum)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def save_image_png(pixels, path):
    """Save one C x H x W pixel tensor in [0,1] as a lossless PNG."""
    arr = np.asarray(pixels)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = np.transpose(arr, (1, 2, 0))
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)
