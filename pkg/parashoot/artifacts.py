"""Trajectory CSV, JSON summaries and SVG orbit plots."""
import json
import logging
import os
from typing import Optional

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from parashoot.integrator import Trajectory, assemble_trajectory  # noqa: E402
from parashoot.potentials import ProblemConfig  # noqa: E402

CSV_COLUMNS = ("t", "x", "y", "vx", "vy", "energy_residual", "min_centre_dist")

# Stable SVG ids and no timestamp, so identical orbits give identical files
matplotlib.rcParams["svg.hashsalt"] = "parashoot"


def _ensure_dir(path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_trajectory_csv(path: str, traj: Trajectory, stamp: dict) -> int:
    """
    Write one row per sample with 17 significant digits.

    :param stamp: Provenance fields written as ``# key: value`` header comments

    :return: Number of data rows
    """
    _ensure_dir(path)
    rows = np.column_stack([
        traj.times, traj.positions, traj.velocities,
        traj.energy_residuals, traj.min_distances])
    header = "\n".join(f"{key}: {value}" for key, value in sorted(stamp.items()))
    header += "\n" + ",".join(CSV_COLUMNS)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=header, comments="# ")
    logging.info(f"Wrote {len(rows)} samples to {path}")
    return len(rows)


def read_trajectory_csv(path: str, cfg: ProblemConfig) -> Trajectory:
    rows = np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#"))
    return assemble_trajectory(rows[:, 0], rows[:, 1:3], rows[:, 3:5], cfg, rows[:, 5])


def bolza_summary(sol, stamp: dict) -> dict:
    """JSON-ready summary of one Bolza solution."""
    return {
        **stamp,
        "omega": sol.omega,
        "action": sol.action,
        "maupertuis": sol.value,
        "identity_gap": sol.identity_gap,
        "parity": list(sol.parity.bits),
        "gradient_norm": sol.gradient_norm,
        "iterations": sol.iterations,
        "nodes": sol.path.node_count,
        "energy_residual": sol.energy_residual,
        "restart_spread": sol.restart_spread,
        "time_shift": sol.time_shift,
        "ring_crossings": list(sol.trajectory.ring_crossings),
        "q_minus": sol.q_minus.tolist(),
        "q_plus": sol.q_plus.tolist(),
    }


def write_json(path: str, payload: dict) -> None:
    _ensure_dir(path)
    with open(path, mode="w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logging.info(f"Wrote {path}")


def plot_orbit(path: str, trajectories, cfg: ProblemConfig, title: str = "",
               stamp: Optional[dict] = None) -> None:
    """
    SVG of one or more orbits with the centres and the K-ring.

    :param stamp: Provenance fields, written to the SVG description and a footer
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    _ensure_dir(path)
    fig, ax = plt.subplots(figsize=(6, 6))
    angles = np.linspace(0.0, 2.0 * np.pi, 361)
    K = cfg.ring_radius
    ax.plot(K * np.cos(angles), K * np.sin(angles), color="0.6", linestyle="--",
            linewidth=0.8, label="K-ring")
    for k, traj in enumerate(trajectories):
        ax.plot(traj.positions[:, 0], traj.positions[:, 1], linewidth=1.0,
                label="orbit" if k == 0 else None)
    positions = cfg.positions
    ax.scatter(positions[:, 0], positions[:, 1], s=30.0 * cfg.masses / cfg.masses.max(),
               color="black", zorder=3, label="centres")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    metadata = {"Date": None}
    if stamp:
        provenance = ", ".join(f"{key}={value}" for key, value in sorted(stamp.items()))
        metadata["Description"] = provenance
        fig.text(0.01, 0.01, provenance, fontsize="x-small", color="0.4")
    fig.savefig(path, format="svg", metadata=metadata)
    plt.close(fig)
    logging.info(f"Wrote {path}")
