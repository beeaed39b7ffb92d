"""Per-vehicle position series and a static top-down figure."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def vehicle_series(xs, vehicles: int) -> list[np.ndarray]:
    """``(T+1, 2)`` arrays of longitudinal and lateral position per vehicle."""
    X = np.asarray(xs, dtype=float)
    return [X[:, [4 * v, 4 * v + 1]] for v in range(vehicles)]


def write_vehicle_csvs(out: Path, xs, vehicles: int) -> list[Path]:
    paths = []
    for v, series in enumerate(vehicle_series(xs, vehicles)):
        p = out / f"vehicle_{v + 1}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "longitudinal", "lateral"])
            for t, (lon, lat) in enumerate(series):
                w.writerow([t + 1, repr(float(lon)), repr(float(lat))])
        paths.append(p)
    return paths


def render_vehicles(path: Path, xs, vehicles: int, lanes=(-2.0, 2.0), snapshots: int = 5) -> Path:
    """Draw each vehicle's path with markers at evenly spaced stages."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = vehicle_series(xs, vehicles)
    fig, ax = plt.subplots(figsize=(10, 3))
    lo = min(s[:, 0].min() for s in series) - 5
    hi = max(s[:, 0].max() for s in series) + 5
    width = abs(lanes[1] - lanes[0])
    edges = sorted({min(lanes) - width / 2, (lanes[0] + lanes[1]) / 2, max(lanes) + width / 2})
    for e in edges:
        ax.hlines(e, lo, hi, colors="0.6", linestyles="--" if e not in (edges[0], edges[-1]) else "-", lw=1)
    marks = np.linspace(0, len(series[0]) - 1, snapshots).round().astype(int)
    for v, s in enumerate(series):
        line, = ax.plot(s[:, 0], s[:, 1], lw=1.5, label=f"vehicle {v + 1}")
        ax.scatter(s[marks, 0], s[marks, 1], color=line.get_color(), s=18, zorder=3)
    ax.set_xlabel("longitudinal position")
    ax.set_ylabel("lateral position")
    ax.set_xlim(lo, hi)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
