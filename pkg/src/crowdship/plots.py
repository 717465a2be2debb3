"""Figures written next to the evaluation and sweep CSV files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_evaluation(summary: dict, out: Path) -> list[Path]:
    out = Path(out)
    label = summary.get("label", "")
    paths = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    hours = np.arange(len(summary["hourly_cost"]))
    ax.bar(hours, summary["hourly_cost"], color="tab:blue")
    ax.set_xlabel("hour of day")
    ax.set_ylabel("mean cost ($)")
    ax.set_title(f"{label} cost by hour")
    paths.append(_save(fig, out / "hourly_cost.png"))

    fig, ax = plt.subplots(figsize=(6, 3.5))
    edges = summary["detour_bins"]
    ax.bar(edges, summary["detour_counts"], width=np.diff(edges + [edges[-1] + 2])[0], align="edge",
           color="tab:orange")
    ax.set_xlabel("detour (minutes, last bin open-ended)")
    ax.set_ylabel("accepted offers")
    ax.set_title(f"{label} detour distribution")
    paths.append(_save(fig, out / "detour_distribution.png"))

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(hours, summary["hourly_batch_size"], marker="o")
    ax.set_xlabel("hour of day")
    ax.set_ylabel("orders per offer")
    ax.set_title(f"{label} batch size over the day")
    paths.append(_save(fig, out / "batch_size_by_hour.png"))

    heat = np.asarray(summary["pricing_heatmap"], dtype=float)
    if heat.size:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        share = heat / np.maximum(heat.sum(axis=1, keepdims=True), 1.0)
        im = ax.imshow(share.T, aspect="auto", origin="lower", cmap="viridis")
        ax.set_yticks(range(len(summary["multipliers"])), [f"{m:g}" for m in summary["multipliers"]])
        ax.set_xlabel("hour of day")
        ax.set_ylabel("multiplier")
        ax.set_title(f"{label} pricing choices (share per hour)")
        fig.colorbar(im, ax=ax)
        paths.append(_save(fig, out / "pricing_heatmap.png"))
    return paths


def render_sweep(table: dict, out: Path) -> Path:
    rows = table["rows"]
    labels = list(dict.fromkeys(k for r in rows for k in r["cost"]))
    x = np.arange(len(rows))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for i, lab in enumerate(labels):
        ax.bar(x + i * width, [r["cost"].get(lab, np.nan) for r in rows], width, label=lab)
    ax.set_xticks(x + 0.4 - width / 2, [f"{r['value']:g}" for r in rows])
    ax.set_xlabel(table["axis"])
    ax.set_ylabel("mean daily cost ($)")
    ax.legend()
    return _save(fig, Path(out) / "sweep.png")
