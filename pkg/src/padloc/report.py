"""Report rendering: per-figure CSV exports with matplotlib figures saved
alongside them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def error_cdf(errors, out_dir, stem="error_cdf", label=""):
    """Localization-error CDF: CSV of (error_m, cdf) plus a PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    e = np.sort(np.asarray(errors, dtype=float))
    cdf = np.arange(1, len(e) + 1) / len(e)
    _save_csv(out / f"{stem}.csv", ["error_m", "cdf"], zip(e, cdf))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(e, cdf, label=label or None)
    ax.set_xlabel("Location error (m)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if label:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"{stem}.png", dpi=150)
    plt.close(fig)
    return out / f"{stem}.csv", out / f"{stem}.png"


def latency_histogram(latencies_us, out_dir, stem="latency_hist", bins=40):
    """Per-update latency histogram: CSV of bin edges/counts plus a PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lat_ms = np.asarray(latencies_us, dtype=float) / 1000.0
    counts, edges = np.histogram(lat_ms, bins=bins)
    _save_csv(out / f"{stem}.csv", ["bin_left_ms", "bin_right_ms", "count"],
              zip(edges[:-1], edges[1:], counts))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(lat_ms, bins=bins, color="tab:blue", alpha=0.8)
    ax.set_xlabel("Per-update latency (ms)")
    ax.set_ylabel("Updates")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / f"{stem}.png", dpi=150)
    plt.close(fig)
    return out / f"{stem}.csv", out / f"{stem}.png"


def trajectory_figure(traj_ts, traj_xyz, truth_ts, truth_xyz, out_dir,
                      stem="trajectory"):
    """Estimated vs ground-truth trajectory per axis; CSV plus a PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _save_csv(out / f"{stem}.csv",
              ["timestamp_us", "x", "y", "z"],
              ((int(t), *map(float, p)) for t, p in zip(traj_ts, traj_xyz)))
    fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
    t0 = truth_ts[0]
    for a, name in enumerate("xyz"):
        axes[a].plot((truth_ts - t0) * 1e-6, truth_xyz[:, a], "k-", lw=1,
                     label="truth")
        axes[a].plot((np.asarray(traj_ts) - t0) * 1e-6,
                     np.asarray(traj_xyz)[:, a], "r.", ms=2, label="estimate")
        axes[a].set_ylabel(f"{name} (m)")
        axes[a].grid(alpha=0.3)
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(out / f"{stem}.png", dpi=150)
    plt.close(fig)
    return out / f"{stem}.csv", out / f"{stem}.png"


def ablation_table(reports, out_dir, stem="ablation"):
    """Comparison table over ablation modes: CSV plus a bar-chart PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["mode", "rmse_m", "mean_error_m", "p90_error_m",
              "latency_mean_us", "latency_p99_us"]
    rows = [[r.mode, r.rmse, r.mean_error, r.p90_error,
             r.latency_mean_us, r.latency_p99_us] for r in reports]
    _save_csv(out / f"{stem}.csv", header, rows)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    modes = [r.mode for r in reports]
    ax.bar(modes, [r.rmse for r in reports], color="tab:orange", alpha=0.85)
    ax.set_ylabel("Trajectory RMSE (m)")
    ax.tick_params(axis="x", rotation=20)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out / f"{stem}.png", dpi=150)
    plt.close(fig)
    return out / f"{stem}.csv", out / f"{stem}.png"
