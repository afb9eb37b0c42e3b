"""Figure rendering for the report paths (headless matplotlib backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_trajectory", "plot_frontier", "plot_ensemble"]


def plot_trajectory(traj, path: str, title: str | None = None):
    """Two panels: copy counts with the delivery bound, and the controls."""
    k = traj.X.shape[1]
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7.5, 6.5))
    for i in range(k):
        ax_x.plot(traj.t, traj.X[:, i], label=f"X_{i + 1}")
    ax_d = ax_x.twinx()
    ax_d.plot(traj.t, traj.D, color="0.3", linestyle="--", label="D(t)")
    ax_d.set_ylabel("D(t)")
    ax_d.set_ylim(-0.02, 1.02)
    ax_x.set_ylabel("copies X_i(t)")
    ax_x.legend(loc="upper left", fontsize=8)
    ax_d.legend(loc="lower right", fontsize=8)
    for i in range(k):
        ax_u.plot(traj.t, traj.u[:, i], label=f"u_{i + 1}")
    ax_u.axhline(0.0, color="0.7", linewidth=0.8)
    ax_u.set_xlabel("t [s]")
    ax_u.set_ylabel("control u_i(t)")
    ax_u.legend(loc="best", fontsize=8)
    if title:
        ax_x.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_frontier(rows: np.ndarray, path: str, title: str | None = None):
    """Feasibility frontier: minimal c4/c3 against c1/c3 plus the bound."""
    rows = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ax.plot(rows[:, 0], rows[:, 1], marker=".", label="min c4/c3 (R > 0)")
    ax.plot(rows[:, 0], rows[:, 2], linestyle="--",
            label="sufficient c4 bound")
    ax.set_xlabel("c1/c3")
    ax.set_ylabel("c4/c3")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ensemble(ens, path: str, title: str | None = None):
    """Sample means against the mean-field reference, plus delivery curves."""
    k = ens.mean_xi.shape[1]
    fig, (ax_x, ax_p) = plt.subplots(2, 1, sharex=True, figsize=(7.5, 6.5))
    for i in range(k):
        line, = ax_x.plot(ens.t, ens.mean_xi[:, i],
                          label=f"mean xi_{i + 1} ({ens.runs} runs)")
        ax_x.fill_between(ens.t,
                          ens.mean_xi[:, i] - 3 * ens.se_xi[:, i],
                          ens.mean_xi[:, i] + 3 * ens.se_xi[:, i],
                          color=line.get_color(), alpha=0.2)
        ax_x.plot(ens.t, ens.ode_X[:, i], linestyle="--",
                  color=line.get_color(), label=f"mean-field X_{i + 1}")
    ax_x.set_ylabel("copies")
    ax_x.legend(loc="best", fontsize=8)
    ax_p.plot(ens.t, ens.mean_psi, label="mean Psi(t)")
    ax_p.plot(ens.t, ens.D, linestyle="--", label="D(t)")
    ax_p.plot(ens.t, ens.empirical_cdf, linestyle=":", label="CDF of T_d")
    ax_p.set_xlabel("t [s]")
    ax_p.set_ylabel("delivery probability")
    ax_p.set_ylim(-0.02, 1.02)
    ax_p.legend(loc="best", fontsize=8)
    if title:
        ax_x.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
