"""Optional figures for the CLI ``--plot`` flag (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .simulator import TrajectoryLog


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_estimate(log: TrajectoryLog, path: str | Path, title: str = "") -> Path:
    plt = _pyplot()
    t = log.column("t")
    has_truth = "eta_err" in log.columns
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for a in "xyz":
        axes[0].plot(t, log.column(f"etahat_{a}"), label=f"eta_hat {a}")
    axes[0].set_ylabel("bias estimate (rad/s)")
    axes[0].legend(loc="best")
    for i in (1, 2):
        for a in "xyz":
            axes[1].plot(t, log.column(f"bhat{i}_{a}"), lw=0.8)
    axes[1].set_ylabel("filtered directions")
    if has_truth:
        axes[2].semilogy(t, np.maximum(log.column("att_err_deg"), 1e-12))
        axes[2].set_ylabel("attitude error (deg)")
    else:
        for k in range(4):
            axes[2].plot(t, log.column(f"qhat{k}"), lw=0.8)
        axes[2].set_ylabel("TRIAD quaternion")
    axes[2].set_xlabel("t (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_control(log: TrajectoryLog, path: str | Path, title: str = "") -> Path:
    plt = _pyplot()
    t = log.column("t")
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for name in ("roll_deg", "pitch_deg", "yaw_deg"):
        axes[0].plot(t, log.column(name), label=name.split("_")[0])
    axes[0].set_ylabel("Euler angles (deg)")
    axes[0].legend(loc="best")
    for c in log.columns:
        if c.startswith("ctl_bhat"):
            axes[1].plot(t, log.column(c), lw=0.8)
    axes[1].set_ylabel("normalized estimates")
    for a in "xyz":
        axes[2].plot(t, log.column(f"tau_{a}"), label=f"tau {a}")
    axes[2].set_ylabel("torque (N m)")
    axes[2].set_xlabel("t (s)")
    axes[2].legend(loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows: list[dict], path: str | Path) -> Path:
    plt = _pyplot()
    err = np.array([r["final_attitude_error_rad"] for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(len(err)), np.maximum(err, 1e-16), "o", ms=3)
    ax.set_xlabel("run")
    ax.set_ylabel("final attitude error (rad)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
