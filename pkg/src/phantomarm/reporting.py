"""CSV reports and matplotlib figures written next to them.

Every CLI report path gets the delimited data plus a rendered PNG so runs
can be eyeballed without loading anything.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_training_report(report, out_dir, stem: str):
    """epoch/train_loss/val_loss/val_metric CSV plus a loss-curve figure."""
    out_dir = Path(out_dir)
    csv_path = write_csv(out_dir / f"{stem}_report.csv",
                         ["epoch", "train_loss", "val_loss", "val_metric"], report.rows())
    rows = report.rows()
    epochs = [r[0] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r[1] for r in rows], label="train")
    ax1.plot(epochs, [r[2] for r in rows], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r[3] for r in rows], color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val metric")
    fig.tight_layout()
    png_path = out_dir / f"{stem}_curves.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_latency_report(latencies_ms: np.ndarray, out_dir, stem: str = "latency"):
    """Histogram CSV (bin edges + counts) and figure for per-tick latencies."""
    out_dir = Path(out_dir)
    counts, edges = np.histogram(latencies_ms, bins=50)
    rows = [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
    csv_path = write_csv(out_dir / f"{stem}_hist.csv", ["bin_lo_ms", "bin_hi_ms", "count"], rows)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(latencies_ms, bins=50, color="tab:blue")
    ax.axvline(float(np.median(latencies_ms)), color="tab:red", linestyle="--",
               label=f"median {np.median(latencies_ms):.3f} ms")
    ax.set_xlabel("latency per tick (ms)")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    png_path = out_dir / f"{stem}_hist.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_grid_report(result, out_dir, stem: str = "grid"):
    """Grid-search table CSV plus a collision-rate heatmap."""
    out_dir = Path(out_dir)
    rows = [(c.alpha, c.beta, c.val_collision_rate, c.val_mse) for c in result.cells]
    csv_path = write_csv(out_dir / f"{stem}_table.csv",
                         ["alpha", "beta", "val_collision_rate", "val_mse"], rows)
    alphas = sorted({c.alpha for c in result.cells})
    betas = sorted({c.beta for c in result.cells})
    grid = np.full((len(alphas), len(betas)), np.nan)
    for c in result.cells:
        grid[alphas.index(c.alpha), betas.index(c.beta)] = c.val_collision_rate
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(betas)), [f"{b:g}" for b in betas])
    ax.set_yticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_xlabel("beta")
    ax.set_ylabel("alpha")
    fig.colorbar(im, ax=ax, label="val collision rate")
    marker = (alphas.index(result.best_alpha), betas.index(result.best_beta))
    ax.plot(marker[1], marker[0], "r*", markersize=14)
    fig.tight_layout()
    png_path = out_dir / f"{stem}_heatmap.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_accuracy_report(per_link_acc: np.ndarray, out_dir, stem: str = "predictor_accuracy"):
    out_dir = Path(out_dir)
    rows = [(i, float(a)) for i, a in enumerate(per_link_acc)]
    csv_path = write_csv(out_dir / f"{stem}.csv", ["link", "accuracy"], rows)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(per_link_acc)), per_link_acc, color="tab:blue")
    ax.axhline(0.95, color="tab:red", linestyle="--")
    ax.set_xlabel("link")
    ax.set_ylabel("held-out accuracy")
    ax.set_ylim(0.5, 1.0)
    fig.tight_layout()
    png_path = out_dir / f"{stem}.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path
