"""Matplotlib figure rendering for the report and compare commands.

Figures are written to files only; no interactive backend is touched.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import ReductionReport


def render_reduction_figure(rep: ReductionReport, path: str, title: str = "") -> None:
    """Horizontal per-layer FLOPs bars, before vs after, with drop labels."""
    layers = [row for row in rep.layers if row[1] > 0]
    names = [row[0] for row in layers]
    before = np.array([row[1] for row in layers], dtype=np.float64)
    after = np.array([row[2] for row in layers], dtype=np.float64)
    drops = [row[3] for row in layers]
    n = len(names)
    fig, ax = plt.subplots(figsize=(9, max(3.0, 0.32 * n + 1.5)))
    y = np.arange(n)
    ax.barh(y + 0.2, before, height=0.38, label="before", color="#4878a8")
    ax.barh(y - 0.2, after, height=0.38, label="after", color="#e1812c")
    for i, d in enumerate(drops):
        ax.annotate(f"-{d:.1f}%", (max(before[i], after[i]), y[i]),
                    textcoords="offset points", xytext=(4, -3), fontsize=7)
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("FLOPs (multiply-accumulates)")
    total = (f"total: {rep.total_flops_before / 1e6:.1f}M -> "
             f"{rep.total_flops_after / 1e6:.1f}M  (-{rep.flops_drop:.2f}%)   "
             f"params: {rep.total_params_before / 1e6:.2f}M -> "
             f"{rep.total_params_after / 1e6:.2f}M  (-{rep.params_drop:.2f}%)")
    ax.set_title((title + "\n" if title else "") + total, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_compare_figure(rows: list[dict], criteria: list[str],
                          path: str, title: str = "") -> None:
    """Per-layer rank agreement between criteria pairs.

    One line per criterion pair: Spearman correlation across layers, plus a
    second panel with bottom-k overlap fractions.
    """
    pairs = sorted({r["pair"] for r in rows})
    layers = []
    for r in rows:
        if r["layer"] not in layers:
            layers.append(r["layer"])
    fig, axes = plt.subplots(2, 1, figsize=(max(6.0, 0.5 * len(layers) + 2), 7),
                             sharex=True)
    x = np.arange(len(layers))
    for pair in pairs:
        sub = {r["layer"]: r for r in rows if r["pair"] == pair}
        rho = [sub[l]["spearman"] if l in sub else np.nan for l in layers]
        ovl = [sub[l]["bottom_k_overlap"] if l in sub else np.nan for l in layers]
        axes[0].plot(x, rho, marker="o", markersize=3, linewidth=1, label=pair)
        axes[1].plot(x, ovl, marker="s", markersize=3, linewidth=1, label=pair)
    axes[0].set_ylabel("Spearman rank correlation")
    axes[0].axhline(0.0, color="gray", linewidth=0.6)
    axes[0].set_ylim(-1.05, 1.05)
    axes[0].legend(fontsize=7)
    axes[1].set_ylabel("bottom-k overlap")
    axes[1].set_ylim(-0.05, 1.05)
    axes[1].set_xticks(x)
    axes[1].set_xticklabels(layers, rotation=90, fontsize=6)
    if title:
        axes[0].set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
