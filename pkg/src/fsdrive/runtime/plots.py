"""Episode charts and summaries."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fsdrive.world.log import EpisodeLog

__all__ = ["emit_plots"]


def emit_plots(log: EpisodeLog, out_dir) -> list[Path]:
    """Vector charts of the control inputs and the total field, plus a CSV summary."""
    if not log.ticks:
        raise ValueError("cannot plot an empty log")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = np.array([tick.t for tick in log.ticks])
    a = np.array([tick.a for tick in log.ticks])
    delta = np.array([tick.delta for tick in log.ticks])
    fld = np.array([tick.field for tick in log.ticks])
    produced: list[Path] = []

    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    axes[0].plot(t, a, lw=1.0)
    axes[0].set_ylabel("acceleration (m/s$^2$)")
    axes[1].plot(t, delta, lw=1.0, color="tab:orange")
    axes[1].set_ylabel("steering (rad)")
    axes[1].set_xlabel("time (s)")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.set_xlim(t[0], t[-1])
    fig.suptitle(f"{log.scenario.name}: control inputs")
    path = out / f"{log.scenario.name}_controls.svg"
    fig.savefig(path)
    plt.close(fig)
    produced.append(path)

    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.plot(t, fld, lw=1.0, color="tab:red")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("total potential")
    ax.set_xlim(t[0], t[-1])
    ax.grid(alpha=0.3)
    fig.suptitle(f"{log.scenario.name}: assigned potential value")
    path = out / f"{log.scenario.name}_field.svg"
    fig.savefig(path)
    plt.close(fig)
    produced.append(path)

    summary = out / f"{log.scenario.name}_summary.csv"
    finite_ttc = [x for x in (tick.min_ttc for tick in log.ticks) if np.isfinite(x)]
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["duration_s", repr(float(t[-1] - t[0] + (t[1] - t[0] if len(t) > 1 else 0)))])
        writer.writerow(["mean_abs_a", repr(float(np.mean(np.abs(a))))])
        writer.writerow(["max_abs_a", repr(float(np.max(np.abs(a))))])
        writer.writerow(["mean_abs_delta", repr(float(np.mean(np.abs(delta))))])
        writer.writerow(["max_abs_delta", repr(float(np.max(np.abs(delta))))])
        writer.writerow(["mean_field", repr(float(np.mean(fld)))])
        writer.writerow(["max_field", repr(float(np.max(fld)))])
        writer.writerow(["min_ttc", repr(float(min(finite_ttc))) if finite_ttc else "inf"])
    produced.append(summary)
    return produced
