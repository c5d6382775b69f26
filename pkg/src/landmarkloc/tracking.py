"""Map-based incremental localization.

Each frame: predict a pose with a motion model, gate on image entropy,
project the map at the prediction, associate keypoints to nearby projected
landmarks by descriptor distance, and refine the pose by robust Gauss-Newton
over reprojection factors (plus optional prior factors).
"""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import _reproj
from ._lm import damped_gauss_newton
from .errors import EmptyHistory, SingularSystem, TooFewObservations
from .evaluation import Trajectory
from .features import Frame, KDTree, frame_entropy
from .geometry import CameraIntrinsics, Pose, compose_projection, project_points, skew, so3_left_jacobian_inv
from .robust import huber_weight

if TYPE_CHECKING:
    from .mapping.model import SfmModel

log = logging.getLogger(__name__)


class MotionModel(str, enum.Enum):
    STATIC = "static"
    CONSTANT_SPEED = "const-speed"


class TrackStatus(str, enum.Enum):
    TRACKED = "Tracked"
    SKIPPED_ENTROPY = "SkippedEntropy"
    SKIPPED_ASSOCIATION = "SkippedAssociation"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class TrackerConfig:
    radius_px: float = 10.0
    max_descriptor_distance: float = 0.7
    min_observations: int = 10
    min_entropy_bits: float = 4.0
    huber_delta_px: float = 2.0
    gn_max_iterations: int = 20
    gn_tolerance: float = 1e-10
    landmark_prior_sigma: float | None = None
    pose_prior_sigma: tuple[float, ...] | float | None = None
    motion_model: MotionModel = MotionModel.STATIC
    min_inlier_ratio: float = 0.3

    def __post_init__(self):
        if not self.radius_px > 0:
            raise ValueError("radius_px must be positive")
        if self.min_observations < 6:
            raise ValueError("min_observations must be >= 6")
        if not self.gn_tolerance > 0:
            raise ValueError("gn_tolerance must be positive")
        object.__setattr__(self, "motion_model", MotionModel(self.motion_model))


@dataclass(frozen=True)
class Correspondence2D3D:
    landmark_id: int
    pixel: np.ndarray
    position: np.ndarray
    descriptor_distance: float
    keypoint_index: int = -1


@dataclass
class PoseDiagnostics:
    iterations: int
    n_inliers: int
    rms_px: float
    cost_history: list[float]
    residuals: np.ndarray
    landmark_positions: np.ndarray | None = None


@dataclass
class FrameDiagnostics:
    frame_id: int
    timestamp: float
    status: TrackStatus
    n_assoc: int = 0
    n_inliers: int = 0
    iterations: int = 0
    rms_px: float = float("nan")
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# Motion model
# ---------------------------------------------------------------------------

def predict_pose(history: list[Pose], model: MotionModel = MotionModel.STATIC) -> Pose:
    """Static repeats the last pose; constant speed replays the last relative
    motion, ``T_k ∘ T_{k-1}^-1 ∘ T_k``. One pose in history degrades to static."""
    if not history:
        raise EmptyHistory("no pose to predict from")
    last = history[-1]
    if MotionModel(model) is MotionModel.STATIC or len(history) < 2:
        return last
    prev = history[-2]
    return last.compose(prev.inverse()).compose(last)


# ---------------------------------------------------------------------------
# Landmark table and projection
# ---------------------------------------------------------------------------

class LandmarkTable:
    """Array view of a map: ids, positions (L, 3), descriptors (L, D)."""

    def __init__(self, ids, positions, descriptors):
        self.ids = np.asarray(ids, dtype=int)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.descriptors = np.asarray(descriptors, dtype=float)
        self.row = {int(i): r for r, i in enumerate(self.ids)}

    @classmethod
    def from_model(cls, model: SfmModel) -> LandmarkTable:
        ids = model.landmark_ids()
        missing = [int(i) for i in ids if model.landmarks[i].descriptor is None]
        if missing:
            raise ValueError(f"landmarks without descriptors: {missing[:5]}")
        return cls(ids, model.positions(ids), model.descriptors(ids))

    def __len__(self) -> int:
        return len(self.ids)


def _as_table(map_) -> LandmarkTable:
    return map_ if isinstance(map_, LandmarkTable) else LandmarkTable.from_model(map_)


def project_landmarks(map_, pose: Pose, intrinsics: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project every landmark; keep those in front of the camera and inside
    ``[0, width) x [0, height)``. Returns ``(landmark_ids, pixels)``."""
    table = _as_table(map_)
    if len(table) == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 2))
    pix, depth = project_points(compose_projection(intrinsics, pose), table.positions)
    keep = (depth > 0) & intrinsics.in_bounds(pix)
    return table.ids[keep], pix[keep]


# ---------------------------------------------------------------------------
# 2D-3D association
# ---------------------------------------------------------------------------

def associate_2d3d(frame: Frame, projections: tuple[np.ndarray, np.ndarray], map_,
                   config: TrackerConfig) -> list[Correspondence2D3D]:
    """Windowed nearest-descriptor association, one-to-one in both directions.

    For each keypoint, the projected landmarks within ``radius_px`` are
    candidates and the one with the smallest descriptor distance wins if that
    distance is below ``max_descriptor_distance``. A landmark claimed by
    several keypoints goes to the smallest descriptor distance.
    """
    table = _as_table(map_)
    ids, pix = projections
    if len(ids) == 0 or len(frame) == 0:
        return []
    tree = KDTree(pix)
    rows = np.array([table.row[int(i)] for i in ids])
    best: dict[int, tuple[float, int]] = {}
    for k in range(len(frame)):
        hits = tree.query(frame.pixels[k], radius=config.radius_px)
        if not hits:
            continue
        cand = np.array([h[0] for h in hits])
        dd = np.linalg.norm(table.descriptors[rows[cand]] - frame.descriptors[k], axis=1)
        j = int(np.argmin(dd))
        if dd[j] >= config.max_descriptor_distance:
            continue
        lm = int(cand[j])
        prev = best.get(lm)
        if prev is None or dd[j] < prev[0]:
            best[lm] = (float(dd[j]), k)
    out = []
    for lm, (dist, k) in sorted(best.items(), key=lambda kv: kv[1][1]):
        r = rows[lm]
        out.append(Correspondence2D3D(int(table.ids[r]), frame.pixels[k].copy(), table.positions[r].copy(), dist, k))
    return out


# ---------------------------------------------------------------------------
# Pose optimisation
# ---------------------------------------------------------------------------

def _prior_sigma6(sigma) -> np.ndarray:
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (6,)).copy()
    if np.any(s <= 0):
        raise ValueError("prior sigmas must be positive")
    return s


def _pose_prior_terms(prior: Pose, pose: Pose, sigma6: np.ndarray):
    """Whitened residual and Jacobian of the pose prior factor."""
    xi = prior.local(pose)
    w, v = xi[:3], xi[3:]
    J = np.zeros((6, 6))
    J[:3, :3] = so3_left_jacobian_inv(w)
    J[3:, :3] = -skew(v)
    J[3:, 3:] = np.eye(3)
    return xi / sigma6, J / sigma6[:, None]


def refine_pose(world, pixels, K: CameraIntrinsics, initial: Pose, huber_delta: float = 2.0,
                max_iterations: int = 20, tolerance: float = 1e-10, pose_prior: Pose | None = None,
                pose_prior_sigma=None, landmark_sigma: float | None = None):
    """Robust Gauss-Newton over one pose (and optionally the landmarks).

    Returns ``(pose, landmark_positions, SolveInfo)``. With ``landmark_sigma``
    the landmarks become variables tied to their map positions by Gaussian
    priors; otherwise they are held fixed.
    """
    X0 = np.asarray(world, dtype=float).reshape(-1, 3)
    meas = np.asarray(pixels, dtype=float).reshape(-1, 2)
    m = len(X0)
    soft = landmark_sigma is not None
    sigma6 = _prior_sigma6(pose_prior_sigma) if pose_prior_sigma is not None else None
    prior = pose_prior if pose_prior is not None else initial

    def residuals(state):
        pose, X = state
        pix, _ = project_points(compose_projection(K, pose), X)
        return pix - meas

    def cost(state):
        pose, X = state
        norms = np.linalg.norm(residuals(state), axis=1)
        c = float(_reproj.huber_cost(norms, huber_delta).sum())
        if soft:
            c += 0.5 * float(np.sum((X - X0) ** 2)) / landmark_sigma**2
        if sigma6 is not None:
            r, _ = _pose_prior_terms(prior, pose, sigma6)
            c += 0.5 * float(r @ r)
        return c

    def linearize(state):
        pose, X = state
        pix, Jp, Jl, _ = _reproj.project_with_jacobians(pose.rotation, pose.translation, X, K)
        r = pix - meas
        w = huber_weight(np.linalg.norm(r, axis=1), huber_delta)
        n = 6 + (3 * m if soft else 0)
        H = np.zeros((n, n))
        g = np.zeros(n)
        H[:6, :6] = np.einsum("n,nai,naj->ij", w, Jp, Jp)
        g[:6] = np.einsum("n,nai,na->i", w, Jp, r)
        if soft:
            inv_var = 1.0 / landmark_sigma**2
            Hpl = np.einsum("n,nai,naj->nij", w, Jp, Jl)  # (m, 6, 3)
            Hll = np.einsum("n,nai,naj->nij", w, Jl, Jl) + inv_var * np.eye(3)
            gl = np.einsum("n,nai,na->ni", w, Jl, r) + inv_var * (X - X0)
            H[:6, 6:] = Hpl.transpose(1, 0, 2).reshape(6, 3 * m)
            H[6:, :6] = H[:6, 6:].T
            for i in range(m):
                H[6 + 3 * i:9 + 3 * i, 6 + 3 * i:9 + 3 * i] = Hll[i]
            g[6:] = gl.ravel()
        if sigma6 is not None:
            rp, Jpp = _pose_prior_terms(prior, pose, sigma6)
            H[:6, :6] += Jpp.T @ Jpp
            g[:6] += Jpp.T @ rp
        return H, g

    def retract(state, dx):
        pose, X = state
        X_new = X + dx[6:].reshape(-1, 3) if soft else X
        return pose.retract(dx[:6]), X_new

    # observability of the pose block, after Jacobi scaling
    H0, _ = linearize((initial, X0))
    Hp = H0[:6, :6]
    d = np.sqrt(np.clip(np.diag(Hp), 1e-300, None))
    eig = np.linalg.eigvalsh(Hp / np.outer(d, d))
    if eig[0] <= 1e-10 * eig[-1]:
        raise SingularSystem("pose is not observable from these correspondences")

    info = damped_gauss_newton((initial, X0), cost, linearize, retract,
                               max_iterations=max_iterations, rel_tol=tolerance, cost_floor=1e-24)
    pose, X = info.state
    return pose, X, info


def optimize_pose(correspondences: list[Correspondence2D3D], intrinsics: CameraIntrinsics, initial: Pose,
                  config: TrackerConfig) -> tuple[Pose, PoseDiagnostics]:
    """Refine ``initial`` against 2D-3D correspondences (Huber, Gauss-Newton)."""
    if len(correspondences) < config.min_observations:
        raise TooFewObservations(f"{len(correspondences)} correspondences < {config.min_observations}")
    world = np.array([c.position for c in correspondences])
    pixels = np.array([c.pixel for c in correspondences])
    pose, X, info = refine_pose(
        world, pixels, intrinsics, initial,
        huber_delta=config.huber_delta_px,
        max_iterations=config.gn_max_iterations,
        tolerance=config.gn_tolerance,
        pose_prior_sigma=config.pose_prior_sigma,
        landmark_sigma=config.landmark_prior_sigma,
    )
    pix, _ = project_points(compose_projection(intrinsics, pose), X)
    res = np.linalg.norm(pix - pixels, axis=1)
    diag = PoseDiagnostics(
        iterations=info.iterations,
        n_inliers=int(np.sum(res < 3.0 * config.huber_delta_px)),
        rms_px=float(np.sqrt(np.mean(res**2))),
        cost_history=info.cost_history,
        residuals=res,
        landmark_positions=X if config.landmark_prior_sigma is not None else None,
    )
    return pose, diag


# ---------------------------------------------------------------------------
# Sequence tracking
# ---------------------------------------------------------------------------

@dataclass
class TrackState:
    history: list[Pose] = field(default_factory=list)
    timestamps: list[float] = field(default_factory=list)
    diagnostics: list[FrameDiagnostics] = field(default_factory=list)


class Tracker:
    """Frame-by-frame localization state machine against a fixed map."""

    def __init__(self, map_, intrinsics: CameraIntrinsics, initial_pose: Pose, config: TrackerConfig | None = None):
        self.table = _as_table(map_)
        self.intrinsics = intrinsics
        self.config = config or TrackerConfig()
        self.state = TrackState(history=[initial_pose])
        self.trajectory = Trajectory()

    def step(self, frame: Frame) -> FrameDiagnostics:
        cfg = self.config
        t0 = time.perf_counter()
        predicted = predict_pose(self.state.history, cfg.motion_model)
        diag = FrameDiagnostics(frame.id, frame.timestamp, TrackStatus.TRACKED)
        pose = predicted
        if frame.histogram is not None and frame_entropy(frame.histogram) <= cfg.min_entropy_bits:
            diag.status = TrackStatus.SKIPPED_ENTROPY
        else:
            proj = project_landmarks(self.table, predicted, self.intrinsics)
            corrs = associate_2d3d(frame, proj, self.table, cfg)
            diag.n_assoc = len(corrs)
            if len(corrs) <= cfg.min_observations:
                diag.status = TrackStatus.SKIPPED_ASSOCIATION
            else:
                try:
                    refined, pd = optimize_pose(corrs, self.intrinsics, predicted, cfg)
                except SingularSystem:
                    diag.status = TrackStatus.DIVERGED
                else:
                    diag.n_inliers, diag.iterations, diag.rms_px = pd.n_inliers, pd.iterations, pd.rms_px
                    if pd.n_inliers < cfg.min_inlier_ratio * len(corrs):
                        diag.status = TrackStatus.DIVERGED
                    else:
                        pose = refined
        diag.seconds = time.perf_counter() - t0
        self.state.history.append(pose)
        self.state.timestamps.append(frame.timestamp)
        self.state.diagnostics.append(diag)
        self.trajectory.append(frame.timestamp, pose)
        if diag.status is not TrackStatus.TRACKED:
            log.info("frame %d: %s (%d associations)", frame.id, diag.status.value, diag.n_assoc)
        return diag


def track_sequence(frames: list[Frame], map_, initial_pose: Pose, config: TrackerConfig | None = None,
                   intrinsics: CameraIntrinsics | None = None) -> tuple[Trajectory, list[FrameDiagnostics]]:
    """Localize every frame in order. ``intrinsics`` defaults to the map's."""
    if intrinsics is None:
        intrinsics = map_.intrinsics
    tracker = Tracker(map_, intrinsics, initial_pose, config)
    for frame in frames:
        tracker.step(frame)
    return tracker.trajectory, tracker.state.diagnostics


DIAGNOSTIC_COLUMNS = ("frame_id", "timestamp", "status", "n_assoc", "n_inliers", "iters", "rms_px", "seconds")


def save_diagnostics(path, diagnostics: list[FrameDiagnostics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAGNOSTIC_COLUMNS)
        for d in diagnostics:
            w.writerow([d.frame_id, repr(d.timestamp), d.status.value, d.n_assoc, d.n_inliers, d.iterations,
                        f"{d.rms_px:.6g}", f"{d.seconds:.6f}"])


def load_diagnostics(path) -> list[FrameDiagnostics]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(FrameDiagnostics(
                int(row["frame_id"]), float(row["timestamp"]), TrackStatus(row["status"]), int(row["n_assoc"]),
                int(row["n_inliers"]), int(row["iters"]), float(row["rms_px"]), float(row["seconds"])))
    return out
