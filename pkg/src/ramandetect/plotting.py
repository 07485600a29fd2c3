"""Figures written next to the reproduce tables."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .stats import CountHistogram, HistogramModel, pmf_table
from .transfer import RabiCurve, TransferConfig, thermal_rabi

PNG_META = {"Software": None}  # keep bytes independent of the matplotlib version


def plot_histograms(path, bright: CountHistogram, dark: CountHistogram, model: HistogramModel):
    n, pb, pd = pmf_table(model, max(len(bright.freq), len(dark.freq)) + 2)
    fig, ax = plt.subplots(figsize=(6, 4))
    for h, p, color, label in ((dark, pd, "tab:blue", "dark"), (bright, pb, "tab:orange", "bright")):
        x = np.arange(len(h.freq))
        ax.bar(x, h.freq / h.total, width=0.9, color=color, alpha=0.45, label=f"{label} events")
        ax.plot(n, p, "o-", color=color, ms=3, lw=1, label=f"{label} fit")
    ax.set_xlabel("photons detected")
    ax.set_ylabel("probability")
    ax.set_xlim(-0.5, n[-1] + 0.5)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)


def plot_rabi(path, data: RabiCurve, cfg: TransferConfig, eta: float):
    t = np.linspace(0, data.t[-1], 400)
    fig, ax = plt.subplots(figsize=(6, 4))
    if data.sigma is not None:
        ax.errorbar(data.t * 1e9, data.p, yerr=data.sigma, fmt="o", ms=4, capsize=2, label="simulated")
    else:
        ax.plot(data.t * 1e9, data.p, "o", ms=4, label="simulated")
    ax.plot(t * 1e9, thermal_rabi(cfg, t, eta), "-", lw=1.2, label="thermal fit")
    ax.set_xlabel("Raman pulse time (ns)")
    ax.set_ylabel("P bright")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_META)
    plt.close(fig)
