"""Figure rendering for the report path (headless, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .detection import HistogramData


def render_bootstrap_histogram(hist: HistogramData, path, title: str | None = None) -> None:
    """Draw the binned bootstrap draws with the reference and 95th-percentile
    markers as vertical lines, and write a PNG to ``path``."""
    left = hist.table["bin_left"].to_numpy()
    right = hist.table["bin_right"].to_numpy()
    counts = hist.table["count"].to_numpy()
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    ax.bar(left, counts, width=right - left, align="edge",
           color="#6b8fb5", edgecolor="white", linewidth=0.5)
    ax.axvline(hist.reference, color="#b03a2e", linestyle="--", linewidth=1.5,
               label=f"reference = {hist.reference:.4g}")
    ax.axvline(hist.percentile_95, color="#2c3e50", linestyle=":", linewidth=1.5,
               label=f"95th pct = {hist.percentile_95:.4g}")
    ax.set_xlabel("coefficient")
    ax.set_ylabel("replicates")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
