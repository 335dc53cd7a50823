"""Matplotlib figures rendered next to the delimited report outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def write_curve_csv(path, columns: dict):
    names = list(columns)
    rows = zip(*(columns[n] for n in names))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        writer.writerows(rows)
    return Path(path)


def curve_figure(path, xs, series: dict, xlabel: str = "step", ylabel: str = "value",
                 title: str = "", logy: bool = False):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in series.items():
        ax.plot(xs[:len(values)], values, label=name, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def metric_bars_figure(path, aggregates: dict, title: str = "metrics"):
    names = sorted(aggregates)
    values = [aggregates[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(names)), values, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_title(title)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def ablation_figure(path, deltas, rows: list, metric_names=("ssim", "psnr", "m_lmd", "f_lmd")):
    present = [m for m in metric_names if all(m in r for r in rows)]
    fig, axes = plt.subplots(1, len(present), figsize=(3.2 * len(present), 3.2))
    if len(present) == 1:
        axes = [axes]
    for ax, metric in zip(axes, present):
        ax.plot(deltas, [float(r[metric]) for r in rows], marker="o", linewidth=1.2)
        ax.set_xlabel("deformation magnitude")
        ax.set_title(metric)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
