"""Batch figure rendering for study reports.

Every study that writes delimited output also renders a small set of
matplotlib figures next to it.  All rendering is non-interactive (Agg) and
file-based; nothing here opens a window.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_flow_mean",
    "save_value_slice",
    "save_residual_history",
    "save_convergence_decay",
    "save_monotonicity_table",
    "save_gap_bars",
    "save_state_histogram",
]

plt.rcParams.update(
    {
        "figure.dpi": 140,
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "lines.linewidth": 1.8,
        "figure.autolayout": True,
    }
)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def save_flow_mean(path, times, means, oracle_means=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, means, label="population mean")
    if oracle_means is not None:
        ax.plot(times, oracle_means, "--", label="oracle mean flow")
    ax.set_xlabel("t")
    ax.set_ylabel("mean state")
    ax.set_title("Mean of the measure flow")
    ax.legend()
    return _save(fig, path)


def save_value_slice(path, states, values, oracle_values=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(states, values, label="DP value at t=0")
    if oracle_values is not None:
        ax.plot(states, oracle_values, "--", label="oracle value")
    ax.set_xlabel("x")
    ax.set_ylabel("V(0, x)")
    ax.set_title("Initial-time value function")
    ax.legend()
    return _save(fig, path)


def save_residual_history(path, residuals) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(len(residuals)), residuals, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("flow residual")
    ax.set_title("Fixed-point residuals")
    return _save(fig, path)


def save_convergence_decay(path, n_values, medians, epsilons=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(n_values, medians, marker="o", label="median sup-t W2 distance")
    ref = medians[0] * np.sqrt(n_values[0] / np.asarray(n_values, dtype=float))
    ax.loglog(n_values, ref, ":", label="N^{-1/2} reference")
    if epsilons is not None:
        ax.loglog(n_values, np.maximum(epsilons, 1e-12), marker="s", label="epsilon-hat")
    ax.set_xlabel("N")
    ax.set_ylabel("distance / gap")
    ax.set_title("Convergence toward the mean field limit")
    ax.legend()
    return _save(fig, path)


def save_monotonicity_table(path, table) -> Path:
    table = np.asarray(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in range(1, table.shape[1]):
        ax.plot(table[:, 0], table[:, col], marker="o", label=f"probe {col}")
    ax.set_xlabel("action radius M")
    ax.set_ylabel("V(0, probe)")
    ax.set_title("Value vs action truncation radius")
    ax.legend(fontsize=8)
    return _save(fig, path)


def save_gap_bars(path, labels, gap_means, gap_ses) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(labels))
    ax.bar(xs, gap_means, yerr=np.asarray(gap_ses), capsize=3, alpha=0.85)
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("cost gain of deviation")
    ax.set_title("Paired deviation gains")
    return _save(fig, path)


def save_state_histogram(path, terminal_states, title="Terminal states") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.asarray(terminal_states).reshape(-1), bins=40, density=True, alpha=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(title)
    return _save(fig, path)
