"""SVG line charts derived from trajectory CSVs.

Plots are a convenience; the CSV written next to them holds the exact
numbers they were drawn from.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
import numpy as np

from .diagnostics import RateFit, Trajectory, rate_slope_fit, stationarity_curve
from .errors import InvalidInputError

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _labelled(trajectories) -> list[tuple[str, Trajectory]]:
    if isinstance(trajectories, dict):
        items = [(str(k), v) for k, v in trajectories.items()]
    else:
        items = [(t.label or f"seed{t.seed}", t) for t in trajectories]
    if not items:
        raise InvalidInputError("need at least one trajectory to plot")
    return items


def _slope_fit(traj: Trajectory) -> RateFit | None:
    # only meaningful for trajectories logged at every step with enough range
    try:
        t = traj.column("t")
        return rate_slope_fit(traj, window=(1, int(t[-1])))
    except (InvalidInputError, ValueError, IndexError):
        return None


def emit_plots(trajectories, out) -> dict[str, Path]:
    """Write ``loss.svg``, ``grad_norm.svg`` and ``plot_data.csv`` into ``out``.

    ``trajectories`` is a ``{label: Trajectory}`` mapping or a sequence of
    trajectories. Test-loss series that are entirely missing are left out.
    When a trajectory is logged at every step, the grad-norm chart overlays
    the fitted power law of the running-average nuclear gradient norm.
    """
    items = _labelled(trajectories)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"loss": out / "loss.svg", "grad_norm": out / "grad_norm.svg", "data": out / "plot_data.csv"}

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, traj in items:
        t = traj.column("t")
        ax.plot(t, traj.column("train_loss"), label=f"{label} train")
        test = traj.column("test_loss")
        if np.any(np.isfinite(test)):
            ax.plot(t, test, linestyle="--", label=f"{label} test")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(paths["loss"], format="svg")
    plt.close(fig)

    fits = {}
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, traj in items:
        t = traj.column("t")
        g = traj.column("grad_norm_nuclear")
        if not np.any(np.isfinite(g)):
            g = traj.column("grad_norm_f")
        ax.plot(t, g, label=label)
        fit = _slope_fit(traj)
        if fit is not None:
            fits[label] = fit
            ts, _ = stationarity_curve(traj)
            ax.plot(ts, math.exp(fit.intercept) * ts**fit.slope, linestyle=":",
                    label=f"{label} avg fit, slope {fit.slope:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("gradient norm")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(paths["grad_norm"], format="svg")
    plt.close(fig)

    with paths["data"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "t", "train_loss", "test_loss", "grad_norm_f", "grad_norm_nuclear", "fit_slope"])
        for label, traj in items:
            slope = repr(fits[label].slope) if label in fits else ""
            for r in traj.records:
                w.writerow([label, r.t, repr(r.train_loss), repr(r.test_loss), repr(r.grad_norm_f),
                            repr(r.grad_norm_nuclear), slope])
    return paths
