"""Synthetic scenes, camera paths and noisy keypoint observations with
ground-truth labels, for testing every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import PackingFailure
from .evaluation import Trajectory, save_tum
from .features import Frame, save_frames
from .geometry import CameraIntrinsics, Pose, compose_projection, project_points
from .mapping.io import save_map
from .mapping.model import Landmark, SfmModel

OUTLIER = -1


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class SceneConfig:
    n_landmarks: int = 500
    extent: tuple = ((-10.0, -10.0, -10.0), (10.0, 10.0, 10.0))
    descriptor_dim: int = 32
    # total norm of the descriptor perturbation applied per observation
    descriptor_noise: float = 0.0
    min_descriptor_distance: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_landmarks < 1:
            raise ValueError("n_landmarks must be >= 1")
        if self.descriptor_dim < 2:
            raise ValueError("descriptor_dim must be >= 2")
        if self.descriptor_noise < 0:
            raise ValueError("descriptor_noise must be >= 0")


@dataclass(frozen=True)
class ObservationConfig:
    pixel_noise: float = 0.0
    outlier_rate: float = 0.0
    dropout_rate: float = 0.0
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    rng_seed: int = 0
    # width of the occupied intensity band in the synthetic 256-bin histogram
    histogram_bins: int = 64
    histogram_samples: int = 4096

    def __post_init__(self):
        if not 0 <= self.outlier_rate < 1:
            raise ValueError("outlier_rate must lie in [0, 1)")
        if not 0 <= self.dropout_rate <= 1:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.pixel_noise < 0:
            raise ValueError("pixel_noise must be >= 0")


@dataclass(eq=False)
class Scene:
    ids: np.ndarray
    positions: np.ndarray
    descriptors: np.ndarray
    config: SceneConfig

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def landmarks(self) -> list[Landmark]:
        return [Landmark(int(i), p, d) for i, p, d in zip(self.ids, self.positions, self.descriptors)]

    def to_map(self, intrinsics: CameraIntrinsics | None = None, observation_count: int = 2) -> SfmModel:
        """The ground-truth scene as a map (no camera poses); observation
        counts are nominal."""
        lms = {int(i): Landmark(int(i), p.copy(), d.copy(), observation_count)
               for i, p, d in zip(self.ids, self.positions, self.descriptors)}
        return SfmModel(lms, {}, intrinsics or default_intrinsics())


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_scene(config: SceneConfig = SceneConfig()) -> Scene:
    """Uniform positions in the box; unit descriptors at least
    ``min_descriptor_distance`` apart (rejection sampling)."""
    rng = np.random.default_rng(config.rng_seed)
    n, D = config.n_landmarks, config.descriptor_dim
    lo, hi = (np.asarray(v, dtype=float) for v in config.extent)
    positions = lo + (hi - lo) * rng.random((n, 3))
    descs = np.empty((n, D))
    accepted, attempts = 0, 0
    while accepted < n:
        attempts += 1
        if attempts > 1000 * n:
            raise PackingFailure(f"placed {accepted} of {n} descriptors at min distance "
                                 f"{config.min_descriptor_distance}")
        d = _unit_rows(rng.standard_normal(D))
        if accepted and np.min(np.linalg.norm(descs[:accepted] - d, axis=1)) < config.min_descriptor_distance:
            continue
        descs[accepted] = d
        accepted += 1
    return Scene(np.arange(n), positions, descs, config)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose at ``center`` with the optical axis toward
    ``target`` and image-down along ``-up``."""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=float)
    y = down - (down @ z) * z
    if np.linalg.norm(y) < 1e-9:
        y = np.array([0.0, 1.0, 0.0]) - z[1] * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return Pose.from_center(np.vstack([x, y, z]), center)


def _timestamps(n: int, timestamps, dt: float) -> np.ndarray:
    if timestamps is None:
        return np.arange(n) * dt
    ts = np.asarray(timestamps, dtype=float)
    if len(ts) != n:
        raise ValueError(f"{len(ts)} timestamps for {n} poses")
    return ts


def circle_trajectory(radius: float, n: int, center=(0.0, 0.0, 0.0), height: float = 0.0,
                      look_at_center: bool = True, arc: float = 2 * np.pi, start_angle: float = 0.0,
                      timestamps=None, dt: float = 0.1) -> Trajectory:
    """``n`` poses evenly spaced over ``arc`` radians of a horizontal circle.

    Cameras face the circle's center (or along the tangent when
    ``look_at_center`` is false), so consecutive relative motions are equal.
    """
    if n < 2:
        raise ValueError("need at least two poses")
    center = np.asarray(center, dtype=float)
    ts = _timestamps(n, timestamps, dt)
    step = arc / n if np.isclose(arc, 2 * np.pi) else arc / (n - 1)
    poses = []
    for k in range(n):
        a = start_angle + k * step
        c = center + np.array([radius * np.cos(a), radius * np.sin(a), height])
        target = center if look_at_center else c + np.array([-np.sin(a), np.cos(a), 0.0])
        poses.append(look_at(c, target))
    return Trajectory(ts, poses)


def line_trajectory(start, end, n: int, timestamps=None, dt: float = 0.1) -> Trajectory:
    """``n`` evenly spaced poses from ``start`` to ``end``, facing along the motion."""
    if n < 2:
        raise ValueError("need at least two poses")
    a, b = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    ts = _timestamps(n, timestamps, dt)
    poses = []
    for k in range(n):
        c = b.copy() if k == n - 1 else a + (b - a) * (k / (n - 1))
        poses.append(look_at(c, c + (b - a)))
    return Trajectory(ts, poses)


def generate_trajectory(shape: str = "circle", timestamps=None, **kwargs) -> Trajectory:
    """Dispatch to :func:`circle_trajectory` or :func:`line_trajectory`."""
    if shape == "circle":
        return circle_trajectory(timestamps=timestamps, **kwargs)
    if shape == "line":
        return line_trajectory(timestamps=timestamps, **kwargs)
    raise ValueError(f"unknown trajectory shape {shape!r}")


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

def render_frame(scene: Scene, pose: Pose, obs: ObservationConfig, frame_id: int,
                 timestamp: float) -> tuple[Frame, np.ndarray]:
    """Simulate the keypoints a camera at ``pose`` would extract.

    Returns the frame and, per keypoint, the true landmark id or ``OUTLIER``.
    Randomness is drawn from ``(obs.rng_seed, frame_id)`` so frames can be
    rendered in any order.
    """
    rng = np.random.default_rng([obs.rng_seed, frame_id])
    K = obs.intrinsics
    pix, depth = project_points(compose_projection(K, pose), scene.positions)
    visible = np.flatnonzero((depth > 0) & K.in_bounds(pix))
    visible = visible[rng.random(len(visible)) >= obs.dropout_rate]
    n, D = len(visible), scene.descriptors.shape[1]

    pixels = pix[visible] + rng.normal(0.0, obs.pixel_noise, (n, 2))
    descs = scene.descriptors[visible]
    sd = scene.config.descriptor_noise
    if sd > 0:
        descs = _unit_rows(descs + rng.normal(0.0, sd / np.sqrt(D), (n, D)))
    labels = scene.ids[visible].copy()

    out = rng.random(n) < obs.outlier_rate
    m = int(out.sum())
    pixels[out] = rng.random((m, 2)) * [K.width, K.height]
    descs[out] = _unit_rows(rng.standard_normal((m, D)))
    labels[out] = OUTLIER

    perm = rng.permutation(n)
    band = np.zeros(256)
    lo = 128 - obs.histogram_bins // 2
    band[lo:lo + obs.histogram_bins] = 1.0 / obs.histogram_bins
    hist = rng.multinomial(obs.histogram_samples, band)
    frame = Frame(frame_id, float(timestamp), pixels[perm], descs[perm].reshape(n, D), hist)
    return frame, labels[perm]


def render_sequence(scene: Scene, trajectory: Trajectory, obs: ObservationConfig,
                    first_id: int = 0) -> tuple[list[Frame], list[np.ndarray]]:
    frames, labels = [], []
    for k, (t, pose) in enumerate(trajectory):
        f, lab = render_frame(scene, pose, obs, first_id + k, t)
        frames.append(f)
        labels.append(lab)
    return frames, labels


def matches_from_labels(frames: list[Frame], labels: list[np.ndarray], max_gap: int | None = None,
                        min_matches: int = 1) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Ground-truth keypoint matches between frame pairs (outliers excluded).

    ``max_gap`` limits pairs to frames at most that many positions apart.
    """
    lookups = [{int(l): k for k, l in enumerate(lab) if l != OUTLIER} for lab in labels]
    out = {}
    for i, j in combinations(range(len(frames)), 2):
        if max_gap is not None and j - i > max_gap:
            continue
        common = sorted(lookups[i].keys() & lookups[j].keys())
        if len(common) >= min_matches:
            out[(frames[i].id, frames[j].id)] = [(lookups[i][l], lookups[j][l]) for l in common]
    return out


def write_simulation(out_dir, scene: Scene, trajectory: Trajectory, frames: list[Frame],
                     intrinsics: CameraIntrinsics, labels: list[np.ndarray] | None = None) -> dict[str, Path]:
    """Emit the map, frame file and ground-truth TUM trajectory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"map": out / "map.json", "frames": out / "frames.json", "gt": out / "gt.txt"}
    save_map(scene.to_map(intrinsics), paths["map"])
    save_frames(paths["frames"], frames, descriptor_dim=scene.descriptors.shape[1])
    save_tum(paths["gt"], trajectory)
    if labels is not None:
        paths["labels"] = out / "labels.txt"
        with open(paths["labels"], "w") as fh:
            for f, lab in zip(frames, labels):
                fh.write(f"{f.id} " + " ".join(str(int(x)) for x in lab) + "\n")
    return paths
