"""Matplotlib report figures written as byte-stable SVG files.

Each function takes already-computed results and a path and returns the
path.  The Agg backend is forced and SVG ids are salted with a constant so
repeated runs produce identical files.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.cluster.hierarchy import dendrogram  # noqa: E402

from .render import CP_PALETTE, DECORATION_PALETTE  # noqa: E402

_RC = {
    "svg.hashsalt": "culturepaint",
    "svg.fonttype": "none",
    "font.size": 8,
    "figure.dpi": 100,
}


def _save(fig, path):
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _figure(*args, **kw):
    with plt.rc_context(_RC):
        return plt.subplots(*args, **kw)


def trace_plot(traces: Sequence[np.ndarray], path, ylabel="log-likelihood"):
    """Stored log-likelihood per chain against sample index."""
    fig, ax = _figure(figsize=(6, 3))
    for i, tr in enumerate(traces):
        ax.plot(np.arange(len(tr)), tr, lw=0.7, color=CP_PALETTE[i % len(CP_PALETTE)],
                label=f"chain {i}")
    ax.set_xlabel("stored sample")
    ax.set_ylabel(ylabel)
    if len(traces) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def k_histogram_plot(hist: dict, path, title="clusters per sample"):
    """Bar chart of how often each number of clusters was sampled."""
    fig, ax = _figure(figsize=(4, 3))
    ks = sorted(hist)
    ax.bar(ks, [hist[k] for k in ks], color="#4d4d4d")
    ax.set_xlabel("number of CPs")
    ax.set_ylabel("frequency")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def incidence_plot(values: np.ndarray, labels: np.ndarray, path):
    """Posterior co-clustering heatmap with rows grouped by k-medoids label."""
    order = np.lexsort((np.arange(labels.size), labels))
    fig, ax = _figure(figsize=(5, 4.5))
    im = ax.imshow(values[np.ix_(order, order)], cmap="Greys", vmin=0, vmax=1,
                   interpolation="nearest")
    edges = np.flatnonzero(np.diff(labels[order])) + 0.5
    for e in edges:
        ax.axhline(e, color="#be0032", lw=0.5)
        ax.axvline(e, color="#be0032", lw=0.5)
    ax.set_xlabel("unit-level (grouped)")
    ax.set_ylabel("unit-level (grouped)")
    fig.colorbar(im, ax=ax, label="co-clustering probability")
    fig.tight_layout()
    return _save(fig, path)


def component_plot(tree: np.ndarray, freqs: np.ndarray, labels: Sequence[str],
                   decoration_labels: Sequence[str], path):
    """Single-linkage dendrogram of components beside their expected frequencies."""
    n, D = freqs.shape
    fig, (ax_t, ax_f) = _figure(1, 2, figsize=(7, 0.3 * n + 1.5),
                                gridspec_kw={"width_ratios": [1, 2]})
    dn = dendrogram(tree, orientation="left", labels=list(labels), ax=ax_t,
                    color_threshold=0, above_threshold_color="#000000")
    order = [labels.index(lab) for lab in dn["ivl"]]
    left = np.zeros(n)
    for d in range(D):
        ax_f.barh(np.arange(n), freqs[order, d], left=left, height=0.8,
                  color=DECORATION_PALETTE[d % len(DECORATION_PALETTE)], label=decoration_labels[d])
        left += freqs[order, d]
    ax_f.set_yticks(np.arange(n), [labels[i] for i in order])
    ax_f.set_xlim(0, 1)
    ax_f.set_xlabel("expected frequency")
    ax_t.set_xlabel("distance")
    ax_f.legend(frameon=False, fontsize=6, ncol=max(1, D // 8), loc="upper left",
                bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    return _save(fig, path)


def study_plot(summary: Sequence[dict], path):
    """Mean metrics per simulation cell against counts per unit, one line per D."""
    metrics = (("kl_mean", "misclassification"), ("correlation_mean", "parameter correlation"),
               ("modal_k_mean", "modal K"))
    fig, axes = _figure(1, 3, figsize=(9, 3))
    groups: dict = {}
    for row in summary:
        groups.setdefault((row["D"], row["rho"], row["f"]), []).append(row)
    for i, ((D, rho, f), rows) in enumerate(sorted(groups.items())):
        rows = sorted(rows, key=lambda r: r["counts_per_unit"])
        x = [r["counts_per_unit"] for r in rows]
        for ax, (key, _) in zip(axes, metrics):
            y = [float(r[key]) for r in rows]
            ax.plot(x, y, marker="o", ms=2, lw=0.7, color=CP_PALETTE[i % len(CP_PALETTE)],
                    label=f"D={D} rho={rho} f={f}")
    for ax, (_, name) in zip(axes, metrics):
        ax.set_xscale("log")
        ax.set_xlabel("counts per unit-level")
        ax.set_title(name)
    if len(groups) <= 12:
        axes[-1].legend(frameon=False, fontsize=5)
    fig.tight_layout()
    return _save(fig, path)
