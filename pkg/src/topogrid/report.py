"""Matplotlib renderings of the delimited reports.

Every CLI report path saves a figure next to its CSV.  Rendering is
file-only (Agg backend) and strips the PNG date stamp so repeated runs
produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KWARGS = {"dpi": 130, "metadata": {"Date": None}}


def _finish(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_flow_figure(path: str | Path, branch_ids, flows, title: str) -> None:
    """Per-branch flow profile of one solved state."""
    fig, ax = plt.subplots(figsize=(max(6.0, 0.12 * len(branch_ids)), 3.6))
    x = np.arange(len(branch_ids))
    ax.bar(x, flows, color="steelblue")
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(branch_ids, rotation=90, fontsize=6)
    ax.set_ylabel("flow (p.u.)")
    ax.set_title(title)
    _finish(fig, path)


def save_comparison_figure(path: str | Path, branch_ids, st_flows, oracle_flows,
                           title: str) -> None:
    """Superposed vs full-resolve flows plus their absolute gap."""
    fig, (ax1, ax2) = plt.subplots(
        2, 1, figsize=(max(6.0, 0.12 * len(branch_ids)), 5.2), sharex=True
    )
    x = np.arange(len(branch_ids))
    ax1.plot(x, oracle_flows, "o", ms=4, label="full resolve", color="dimgray")
    ax1.plot(x, st_flows, "x", ms=4, label="superposition", color="crimson")
    ax1.set_ylabel("flow (p.u.)")
    ax1.legend(loc="best", fontsize=8)
    ax1.set_title(title)
    diff = np.abs(np.asarray(st_flows) - np.asarray(oracle_flows))
    ax2.semilogy(x, np.maximum(diff, 1e-16), ".", color="darkorange")
    ax2.set_ylabel("|difference| (p.u.)")
    ax2.set_xticks(x)
    ax2.set_xticklabels(branch_ids, rotation=90, fontsize=6)
    _finish(fig, path)


def save_beta_figure(path: str | Path, labels, betas, alpha: float,
                     independence_band: float) -> None:
    """Coefficients per change with the independence band around 1."""
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(labels)), 3.8))
    x = np.arange(len(labels))
    ax.bar(x, betas, color="seagreen")
    ax.axhline(1.0, color="black", lw=0.8, ls="--")
    ax.axhspan(1.0 - independence_band, 1.0 + independence_band,
               color="seagreen", alpha=0.15, label="independent band")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("beta")
    ax.set_title(f"superposition coefficients (alpha = {alpha:.4g})")
    ax.legend(loc="best", fontsize=8)
    _finish(fig, path)


def save_n1_figure(path: str | Path, results, title: str) -> None:
    """Worst post-contingency loading per screened outage, statuses marked."""
    fig, ax = plt.subplots(figsize=(7.2, 4.0))
    ok_x, ok_y, flagged = [], [], {}
    for i, res in enumerate(results):
        if res.ok:
            ok_x.append(i)
            ok_y.append(float(np.max(np.abs(res.flows))))
        else:
            flagged.setdefault(res.status, []).append(i)
    ax.plot(ok_x, ok_y, ".", color="steelblue", label="max |flow| after outage")
    for status, xs in sorted(flagged.items()):
        ax.plot(xs, np.zeros(len(xs)), "x", label=status)
    ax.set_xlabel("contingency index")
    ax.set_ylabel("max |flow| (p.u.)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _finish(fig, path)


def save_scaling_figure(path: str | Path, rows) -> None:
    """Security-analysis wall time versus grid size, one line per method.

    ``rows`` are (case, n_buses, method, seconds) tuples.
    """
    by_method: dict[str, list[tuple[int, float]]] = {}
    for _case, n_buses, method, seconds in rows:
        by_method.setdefault(method, []).append((int(n_buses), float(seconds)))
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for method, pts in sorted(by_method.items()):
        pts = sorted(pts)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=method)
    ax.set_xlabel("grid size (buses)")
    ax.set_ylabel("N-1 screen wall time (s)")
    ax.set_title("security analysis scaling")
    ax.grid(True, which="both", ls=":", lw=0.5)
    ax.legend(loc="best", fontsize=8)
    _finish(fig, path)
