"""Report figures rendered to files next to the delimited outputs.

All figures use the Agg backend and fixed metadata so reruns produce
byte-identical PNG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_timeseries", "save_errorbar", "save_hist", "save_bounds",
           "save_bars"]

_SAVE_KW = dict(dpi=110, metadata={"Software": "torusflow"})


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_timeseries(path, times, series: dict[str, np.ndarray],
                    xlabel="t", ylabel="", title="", logy=False) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, values in series.items():
        ax.plot(times, values, lw=1.0, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def save_errorbar(path, x, y, yerr, xlabel="", ylabel="", title="",
                  extra: dict | None = None, loglog=False) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(x, y, yerr=yerr, fmt="o-", capsize=3, lw=1.0, label="measured")
    for label, (xe, ye) in (extra or {}).items():
        ax.plot(xe, ye, "s--", lw=1.0, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if extra:
        ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def save_hist(path, values, bins=40, xlabel="", title="",
              vline: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.hist(np.asarray(values), bins=bins, histtype="stepfilled", alpha=0.75)
    if vline is not None:
        ax.axvline(vline, color="k", ls="--", lw=1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    return _finish(fig, path)


def save_bounds(path, report, title="level constants") -> Path:
    """Per-level fitted constants of a dyadic-stack bound report."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for k, consts in sorted(report.constants.items()):
        ax.plot(range(len(consts)), consts, "o-", lw=1.0,
                label=f"k={k} (ratio {report.ratios[k]:.2f})")
    ax.set_yscale("log")
    ax.set_xlabel("level n")
    ax.set_ylabel("fitted C")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=7)
    return _finish(fig, path)


def save_bars(path, labels, values, ylabel="", title="",
              hline: float | None = None, band: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    xs = np.arange(len(labels))
    ax.bar(xs, values, width=0.6)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(x) for x in labels], fontsize=8)
    if hline is not None:
        ax.axhline(hline, color="k", lw=1.0)
        if band:
            ax.axhspan(hline - band, hline + band, color="k", alpha=0.12)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _finish(fig, path)
