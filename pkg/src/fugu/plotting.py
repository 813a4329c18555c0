"""Figures for the report command. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.2),
    "savefig.dpi": 150,
})


def quality_stall_plane(rows: Sequence[dict], path) -> Path:
    """Mean SSIM against stall ratio with 95% CI bars; better is up and to the right."""
    fig, ax = plt.subplots()
    for row in rows:
        x = 100 * row["stall"]
        xerr = [[x - 100 * row["stall_lo"]], [100 * row["stall_hi"] - x]]
        yerr = [[row["ssim"] - row["ssim_lo"]], [row["ssim_hi"] - row["ssim"]]]
        ax.errorbar([x], [row["ssim"]], xerr=xerr, yerr=yerr, fmt="o", capsize=3, ms=4)
        ax.annotate(row["name"], (x, row["ssim"]), textcoords="offset points", xytext=(5, 4))
    ax.set_xlabel("Time spent stalled (%)")
    ax.set_ylabel("Average SSIM (dB)")
    ax.invert_xaxis()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def ssim_cdf(per_scheme: dict[str, Sequence[float]], path) -> Path:
    fig, ax = plt.subplots()
    for name, values in per_scheme.items():
        v = np.sort(np.asarray(values, dtype=float))
        if len(v):
            ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post", label=name)
    ax.set_xlabel("Per-stream mean SSIM (dB)")
    ax.set_ylabel("CDF")
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def ablation_bars(rows, path) -> Path:
    fig, ax = plt.subplots()
    names = [r["variant"] for r in rows]
    ax.bar(names, [r["cross_entropy"] for r in rows], color="0.5")
    ax.set_ylabel("Held-out cross-entropy (nats)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
