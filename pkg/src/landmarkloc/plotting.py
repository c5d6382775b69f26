"""Static SVG figures: error over time and top-down trajectory overlays."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import AteReport, Trajectory  # noqa: E402

# fixed metadata and hash salt keep the SVG bytes reproducible
_SVG_META = {"Date": None}
matplotlib.rcParams["svg.hashsalt"] = "landmarkloc"


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_error_over_time(report: AteReport, path, title: str = "Absolute trajectory error") -> None:
    fig, (ax_p, ax_r) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    t = report.timestamps
    ax_p.plot(t, report.position_errors, color="tab:red", lw=1)
    ax_p.axhline(report.ate_pos, color="k", ls="--", lw=0.8, label=f"RMS {report.ate_pos:.4g} m")
    ax_p.set_ylabel("position error [m]")
    ax_p.legend(loc="upper right")
    ax_r.plot(t, report.rotation_errors, color="tab:blue", lw=1)
    ax_r.axhline(report.ate_rot, color="k", ls="--", lw=0.8, label=f"RMS {report.ate_rot:.4g} deg")
    ax_r.set_ylabel("rotation error [deg]")
    ax_r.set_xlabel("time [s]")
    ax_r.legend(loc="upper right")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories_topdown(gt: Trajectory, est: Trajectory, path, landmarks=None) -> None:
    """Ground truth in green, estimate in red, seen from above (x-y plane)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    if landmarks is not None and len(landmarks):
        L = np.asarray(landmarks)
        ax.scatter(L[:, 0], L[:, 1], s=2, c="0.7", label="landmarks")
    g, e = gt.positions, est.positions
    ax.plot(g[:, 0], g[:, 1], color="tab:green", lw=1.5, label="ground truth")
    if len(e):
        ax.plot(e[:, 0], e[:, 1], color="tab:red", lw=1, label="estimate")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    fig.tight_layout()
    _save(fig, path)
