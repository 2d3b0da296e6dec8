"""CSV and figure emission for the experiment commands.

Every CSV starts with the resolved run configuration echoed as comment
lines, so an output file pins down the run that produced it; figures are
rendered next to the delimited output with the same stem.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def format_value(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(path, header_pairs, columns, rows) -> None:
    """``header_pairs`` are echoed as ``# key = value`` lines; ``rows`` is an
    iterable of tuples matching ``columns`` (empty cells allowed as None)."""
    lines = [f"# {k} = {format_value(v)}" for k, v in header_pairs]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join("" if x is None else format_value(x) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_trajectory(path, times, series: dict) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, (name, values) in zip(axes.ravel(), series.items()):
        ax.plot(times, values, lw=0.8)
        ax.set_title(name)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("t")
    _save(fig, path)


def plot_running_averages(path, curves: dict, analytic_value=None) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (times, values) in curves.items():
        ax.plot(times, values, lw=1.0, label=label)
    if analytic_value is not None:
        ax.axhline(analytic_value, color="k", ls="--", lw=0.8, label="analytic (linear)")
    ax.set_xlabel("t")
    ax.set_ylabel("running average of exp(-|u|^2)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_weak_error(path, dts, per_regime: dict, analytic_curve=None) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (means, errs) in per_regime.items():
        ax.errorbar(dts, means, yerr=errs, marker="o", ms=3, lw=1.0, capsize=2, label=label)
    if analytic_curve is not None:
        ax.plot(dts, analytic_curve, "k--", lw=0.8, label="analytic (linear)")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("dt")
    ax.set_ylabel("stationary weak error")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_space_rate(path, n_values, w2, scaled, limit, mc=None) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.loglog(n_values, w2, "o-", label="W2 (analytic)")
    if mc is not None:
        ax1.loglog(n_values, mc, "s-", label="strong error (MC)")
    ax1.set_xlabel("N")
    ax1.set_ylabel("distance")
    ax1.grid(alpha=0.3, which="both")
    ax1.legend(fontsize=8)
    ax2.semilogx(n_values, scaled, "o-", label="N * W2")
    ax2.axhline(limit, color="k", ls="--", lw=0.8, label="limit")
    ax2.set_xlabel("N")
    ax2.grid(alpha=0.3)
    ax2.legend(fontsize=8)
    _save(fig, path)


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
