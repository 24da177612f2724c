"""Figure rendering for the report-producing subcommands.

Every figure is written next to its CSV (same stem, .png) with the Agg
backend, so reports work headless. Figures are a convenience view of
the delimited output, never the only record of a result.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "figure_path",
    "plot_exit_report",
    "plot_kramers_fit",
    "plot_drift_convergence",
    "plot_quasipotential_boundary",
    "plot_path",
]


def figure_path(csv_path):
    return Path(csv_path).with_suffix(".png")


def _save(fig, out):
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return Path(out)


def plot_exit_report(records, stats, csv_path, title=""):
    fig, (ax_t, ax_p) = plt.subplots(1, 2, figsize=(9, 3.4))
    times = [r.exit_time for r in records if not r.censored]
    if times:
        ax_t.hist(times, bins=30, color="steelblue", alpha=0.85)
    ax_t.set_xlabel("exit time")
    ax_t.set_ylabel("trials")
    label = "exit times (mean %.3g, %d censored)" % (stats.mean_exit_time, stats.n_censored)
    ax_t.set_title(label, fontsize=9)

    params = [r.boundary_param for r in records
              if not r.censored and np.isfinite(r.boundary_param)]
    if params:
        ax_p.hist(params, bins=stats.histogram_edges, color="darkorange", alpha=0.85)
    ax_p.set_xlabel("boundary parameter")
    ax_p.set_title("exit locations", fontsize=9)
    if title:
        fig.suptitle(title, fontsize=10)
    return _save(fig, figure_path(csv_path))


def plot_kramers_fit(fit, csv_path, title=""):
    fig, (ax_f, ax_e) = plt.subplots(1, 2, figsize=(9, 3.4))
    x = 1.0 / fit.epsilons
    y = fit.q_estimate * x + fit.intercept + fit.residuals
    ax_f.plot(x, y, "o", color="steelblue", label="log mean exit time")
    xs = np.linspace(x.min(), x.max(), 50)
    ax_f.plot(xs, fit.q_estimate * xs + fit.intercept, "-", color="black",
              label="slope %.4g" % fit.q_estimate)
    ax_f.set_xlabel("1 / epsilon")
    ax_f.set_ylabel("log mean exit time")
    ax_f.legend(fontsize=8)

    ax_e.plot(fit.epsilons, fit.eps_log_mean, "s-", color="darkorange")
    ax_e.set_xlabel("epsilon")
    ax_e.set_ylabel("epsilon * log mean exit time")
    if title:
        fig.suptitle(title, fontsize=10)
    return _save(fig, figure_path(csv_path))


def plot_drift_convergence(log, csv_path, title=""):
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.semilogy(range(1, len(log.increments) + 1), log.increments, "o-",
                color="steelblue")
    ax.set_xlabel("sweep")
    ax.set_ylabel("weighted sup-norm increment")
    ax.set_title(title or "drift fixed-point convergence", fontsize=10)
    return _save(fig, figure_path(csv_path))


def plot_quasipotential_boundary(params, values, argmin_params, csv_path, title=""):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    order = np.argsort(params)
    ax.plot(np.asarray(params)[order], np.asarray(values)[order], "-",
            color="steelblue")
    for p in argmin_params:
        ax.axvline(p, color="darkorange", linestyle="--", linewidth=1)
    ax.set_xlabel("boundary parameter")
    ax.set_ylabel("exit energy")
    ax.set_title(title or "quasi-potential over the boundary", fontsize=10)
    return _save(fig, figure_path(csv_path))


def plot_path(times, states, csv_path, title=""):
    states = np.asarray(states)
    if states.ndim == 2:
        states = states[None]  # one trajectory
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    if states.shape[-1] == 2:
        for traj in states:
            ax.plot(traj[:, 0], traj[:, 1], "-", alpha=0.8, linewidth=0.9)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        for traj in states:
            ax.plot(times, traj[:, 0], "-", alpha=0.8, linewidth=0.9)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
    ax.set_title(title, fontsize=10)
    return _save(fig, figure_path(csv_path))
