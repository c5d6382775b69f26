"""Trajectory alignment and absolute trajectory error (ATE)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CollinearDegenerate, ParseError, TooFewPairs
from .geometry import (
    Pose,
    SimilarityTransform,
    apply_similarity,
    fit_similarity,
    quat_to_rotation,
    rotation_angle_between,
    rotation_to_quat,
)

DEFAULT_MAX_DT = 0.02


@dataclass(eq=False)
class Trajectory:
    """Timestamped camera poses. Poses are world-to-camera like everywhere
    else in the package; the TUM file format stores camera-to-world."""

    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).ravel()
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps.tolist(), self.poses))

    def append(self, timestamp: float, pose: Pose) -> None:
        if len(self.timestamps) and timestamp <= self.timestamps[-1]:
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.timestamps = np.append(self.timestamps, float(timestamp))
        self.poses.append(pose)

    @property
    def positions(self) -> np.ndarray:
        """Camera centers, (N, 3)."""
        return np.array([p.center for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: SimilarityTransform) -> Trajectory:
        return Trajectory(self.timestamps.copy(), [apply_similarity(T, p) for p in self.poses])

    def subset(self, idx) -> Trajectory:
        idx = np.asarray(idx, dtype=int)
        return Trajectory(self.timestamps[idx], [self.poses[i] for i in idx])


@dataclass
class AteReport:
    ate_pos: float
    ate_rot: float
    position_errors: np.ndarray
    rotation_errors: np.ndarray
    alignment: SimilarityTransform
    timestamps: np.ndarray

    @property
    def per_frame(self) -> list[tuple[float, float]]:
        return list(zip(self.position_errors.tolist(), self.rotation_errors.tolist()))

    @property
    def n_frames(self) -> int:
        return len(self.position_errors)

    def to_dict(self) -> dict:
        T = self.alignment
        return {
            "ate_pos_m": self.ate_pos,
            "ate_rot_deg": self.ate_rot,
            "n_frames": self.n_frames,
            "alignment": {"s": T.scale, "q": rotation_to_quat(T.rotation).tolist(), "t": T.translation.tolist()},
            "per_frame": [
                {"timestamp": float(ts), "dp_m": float(dp), "dr_deg": float(dr)}
                for ts, dp, dr in zip(self.timestamps, self.position_errors, self.rotation_errors)
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def associate(gt: Trajectory, est: Trajectory, max_dt: float = DEFAULT_MAX_DT) -> tuple[np.ndarray, np.ndarray]:
    """Pair each estimate with the nearest ground-truth stamp within ``max_dt``.

    Returns index arrays ``(gt_idx, est_idx)``; each gt entry is used once.
    """
    gi, ei = [], []
    used = set()
    ts = gt.timestamps
    for j, t in enumerate(est.timestamps):
        k = int(np.searchsorted(ts, t))
        best = None
        for c in (k - 1, k):
            if 0 <= c < len(ts) and c not in used and abs(ts[c] - t) <= max_dt:
                if best is None or abs(ts[c] - t) < abs(ts[best] - t):
                    best = c
        if best is not None:
            used.add(best)
            gi.append(best)
            ei.append(j)
    return np.array(gi, dtype=int), np.array(ei, dtype=int)


def _associated(gt, est, max_dt):
    gi, ei = associate(gt, est, max_dt)
    if len(gi) < 3:
        raise TooFewPairs(f"only {len(gi)} poses could be associated by timestamp")
    return gt.subset(gi), est.subset(ei)


def align_trajectories(gt: Trajectory, est: Trajectory, with_scale: bool = True,
                       max_dt: float = DEFAULT_MAX_DT) -> SimilarityTransform:
    """Least-squares similarity (or rigid, ``with_scale=False``) mapping the
    estimated camera centers onto the ground-truth ones."""
    g, e = _associated(gt, est, max_dt)
    try:
        T, _ = fit_similarity(e.positions, g.positions, with_scale=with_scale)
    except CollinearDegenerate:
        raise CollinearDegenerate("estimated camera centers are collinear; alignment is ambiguous") from None
    return T


def compute_ate(gt: Trajectory, est: Trajectory, with_scale: bool = True, align: bool = True,
                literal_position_error: bool = False, max_dt: float = DEFAULT_MAX_DT) -> AteReport:
    """Align ``est`` onto ``gt`` and report RMSE position / rotation errors.

    ``align=False`` compares the raw estimate. ``literal_position_error``
    switches the per-frame position error to ``|p_i - R_i R'_i^-1 p'_i|``
    (camera-to-world rotations) instead of the plain ``|p_i - p'_i|``.
    """
    g, e = _associated(gt, est, max_dt)
    if align:
        T, _ = fit_similarity(e.positions, g.positions, with_scale=with_scale)
        # the closed form carries round-off; keep the identity when it fits at
        # least as well, so identical trajectories score exactly zero
        fitted = np.sum((apply_similarity(T, e.positions) - g.positions) ** 2)
        if np.sum((e.positions - g.positions) ** 2) <= fitted:
            T = SimilarityTransform.identity()
    else:
        T = SimilarityTransform.identity()
    e_al = e.transformed(T)
    p_gt, p_est = g.positions, e_al.positions
    if literal_position_error:
        dp = []
        for pg, pe, Tg, Te in zip(p_gt, p_est, g.poses, e_al.poses):
            Rg_c2w, Re_c2w = Tg.rotation.T, Te.rotation.T
            dp.append(np.linalg.norm(pg - Rg_c2w @ Re_c2w.T @ pe))
        dp = np.array(dp)
    else:
        dp = np.linalg.norm(p_gt - p_est, axis=1)
    dr = np.array([rotation_angle_between(a.rotation.T, b.rotation.T) for a, b in zip(g.poses, e_al.poses)])
    return AteReport(
        ate_pos=float(np.sqrt(np.mean(dp**2))),
        ate_rot=float(np.sqrt(np.mean(dr**2))),
        position_errors=dp,
        rotation_errors=dr,
        alignment=T,
        timestamps=g.timestamps.copy(),
    )


# ---------------------------------------------------------------------------
# TUM format: "timestamp tx ty tz qx qy qz qw", camera-to-world
# ---------------------------------------------------------------------------

def save_tum(path, traj: Trajectory) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, pose in traj:
        c = pose.center
        qw, qx, qy, qz = rotation_to_quat(pose.rotation.T)
        vals = [ts, *c, qx, qy, qz, qw]
        lines.append(" ".join(f"{v:.17g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_tum_pose(fields) -> Pose:
    """``tx ty tz qx qy qz qw`` (camera-to-world) -> world-to-camera Pose."""
    tx, ty, tz, qx, qy, qz, qw = (float(v) for v in fields)
    R_c2w = quat_to_rotation(qw, qx, qy, qz)
    return Pose.from_center(R_c2w.T, [tx, ty, tz])


def load_tum(path) -> Trajectory:
    path = Path(path)
    stamps, poses = [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.replace(",", " ").split()
        if len(tok) != 8:
            raise ParseError(f"expected 8 fields, got {len(tok)}", path, lineno)
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            raise ParseError("non-numeric field", path, lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite field", path, lineno)
        try:
            pose = parse_tum_pose(vals[1:])
        except ValueError as e:
            raise ParseError(str(e), path, lineno) from None
        if stamps and vals[0] <= stamps[-1]:
            raise ParseError("timestamps must be strictly increasing", path, lineno)
        stamps.append(vals[0])
        poses.append(pose)
    return Trajectory(np.array(stamps), poses)


def trajectory_io(path, direction: str = "load", trajectory: Trajectory | None = None):
    if direction == "load":
        return load_tum(path)
    if direction == "save":
        save_tum(path, trajectory)
        return path
    raise ValueError(f"unknown direction {direction!r}")
