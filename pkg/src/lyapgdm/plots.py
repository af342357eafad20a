"""Figure emission for the three case-study plots.

Figures are rendered with matplotlib straight to SVG next to the CSVs they
come from.  Byte output is deterministic for identical inputs: the SVG id
hash salt is pinned and the creation date is stripped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import read_metrics_csv, read_sweep_csv, read_trace_csv

__all__ = ["PLOT_KINDS", "emit_plot", "moving_average"]

PLOT_KINDS = ("training-curve", "rate-vs-bandwidth", "energy-vs-time")

_SMOOTH_WINDOW = 50


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; early entries average what is available."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate(([0.0], np.cumsum(x)))
    n = x.size
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _label(path) -> str:
    return Path(path).stem


def _new_figure():
    plt.rcParams["svg.hashsalt"] = "lyapgdm"
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    ax.grid(True, alpha=0.4)
    return fig, ax


def _training_curve(ax, csv_paths):
    for path in csv_paths:
        cols = read_metrics_csv(path)
        ep, r = cols["episode"], cols["reward_mean"]
        line, = ax.plot(ep, r, alpha=0.25)
        ax.plot(ep, moving_average(r, _SMOOTH_WINDOW), color=line.get_color(),
                label=f"{_label(path)} ({_SMOOTH_WINDOW}-ep avg)")
    ax.set_xlabel("episode")
    ax.set_ylabel("mean per-slot reward")
    ax.set_title("Training reward")


def _rate_vs_bandwidth(ax, csv_paths):
    for path in csv_paths:
        rows = read_sweep_csv(path)
        if not rows:
            raise ValueError(f"{path}: sweep file has no rows")
        values = np.array([r["value"] for r in rows])
        rates = np.array([r["rate_mean_mbps"] for r in rows])
        order = np.argsort(values)
        ax.plot(values[order] / 1e6, rates[order], marker="o", label=_label(path))
    ax.set_xlabel("bandwidth (MHz)")
    ax.set_ylabel("mean uplink rate (Mbit/s)")
    ax.set_title("Average transmission rate vs bandwidth")


def _energy_vs_time(ax, csv_paths, energy_budget):
    for path in csv_paths:
        episodes, _ = read_trace_csv(path, n_devices=_trace_device_count(path))
        if not episodes:
            raise ValueError(f"{path}: trace file has no episodes")
        horizon = min(ep["energy_j"].size for ep in episodes)
        energy = np.mean([ep["energy_j"][:horizon] for ep in episodes], axis=0)
        ax.plot(np.arange(1, horizon + 1), moving_average(energy, horizon),
                label=_label(path))
    ax.axhline(energy_budget, color="black", linestyle="--", linewidth=1.0,
               label=f"budget {energy_budget:g} J")
    ax.set_xlabel("time slot")
    ax.set_ylabel("moving-average propulsion energy (J)")
    ax.set_title("Propulsion energy vs time")


def _trace_device_count(path) -> int:
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                continue
            return sum(1 for c in line.strip().split(",") if c.startswith("b"))
    raise ValueError(f"{path}: missing header row")


def emit_plot(csv_paths, kind: str, out_path, energy_budget: float = 140.0) -> Path:
    """Render one figure kind from one or more CSVs to an SVG file."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}, expected one of {PLOT_KINDS}")
    if isinstance(csv_paths, (str, Path)):
        csv_paths = [csv_paths]
    if not csv_paths:
        raise ValueError("emit_plot needs at least one CSV path")
    fig, ax = _new_figure()
    try:
        if kind == "training-curve":
            _training_curve(ax, csv_paths)
        elif kind == "rate-vs-bandwidth":
            _rate_vs_bandwidth(ax, csv_paths)
        else:
            _energy_vs_time(ax, csv_paths, energy_budget)
        ax.legend(loc="best", fontsize=9)
        fig.tight_layout()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return out_path
