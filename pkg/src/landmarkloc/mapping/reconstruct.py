"""Incremental structure from motion, seeded with a known relative pose."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import LandmarkLocError, RegistrationStalled, SeedDegenerate
from ..features import Frame
from ..geometry import CameraIntrinsics, Pose, compose_projection, project_points
from ..robust import RansacConfig, pnp_ransac
from ..tracking import refine_pose
from .bundle import BundleConfig, bundle_adjust, prune_landmarks
from .descriptors import compute_landmark_descriptors
from .model import AdjustmentReport, Landmark, Observation, SfmModel, Track
from .tracks import build_tracks
from .triangulation import triangulate_multiview

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructionConfig:
    ba_interval: int = 5
    min_registration_inliers: int = 6
    pnp_ransac: RansacConfig = field(default_factory=lambda: RansacConfig(sample_size=6, inlier_threshold=4.0))
    max_triangulation_error_px: float = 4.0
    min_seed_tracks: int = 8
    bundle: BundleConfig = field(default_factory=BundleConfig)
    prune_factor: float = 3.0
    prune_floor_px: float = 1.0
    compute_descriptors: bool = True


class _Builder:
    def __init__(self, frames: dict[int, Frame], tracks: list[Track], K: CameraIntrinsics, config: ReconstructionConfig):
        self.frames = frames
        self.tracks = tracks
        self.K = K
        self.config = config
        self.poses: dict[int, Pose] = {}
        self.points: dict[int, np.ndarray] = {}
        self.obs: dict[int, list[Observation]] = {}
        self.dead: set[int] = set()
        # frame id -> list of (track index, keypoint index)
        self.frame_tracks: dict[int, list[tuple[int, int]]] = {f: [] for f in frames}
        for ti, t in enumerate(tracks):
            for f, k in t.observations:
                if f in self.frame_tracks:
                    self.frame_tracks[f].append((ti, k))
        self.gauge: tuple[int, int] | None = None
        self.reports: list[AdjustmentReport] = []

    def pixel(self, f: int, k: int) -> np.ndarray:
        return self.frames[f].pixels[k]

    def _reproj_error(self, f: int, X: np.ndarray, k: int) -> tuple[float, float]:
        pix, depth = project_points(compose_projection(self.K, self.poses[f]), X[None])
        return float(np.linalg.norm(pix[0] - self.pixel(f, k))), float(depth[0])

    def triangulate_pending(self) -> int:
        added = 0
        for ti, t in enumerate(self.tracks):
            if ti in self.points or ti in self.dead:
                continue
            views = [(f, k) for f, k in t.observations if f in self.poses]
            if len(views) < 2:
                continue
            Ps = [compose_projection(self.K, self.poses[f]) for f, _ in views]
            X = triangulate_multiview(Ps, [self.pixel(f, k) for f, k in views])
            if not np.all(np.isfinite(X)):
                continue
            good = []
            for f, k in views:
                err, depth = self._reproj_error(f, X, k)
                if depth > 0 and err <= self.config.max_triangulation_error_px:
                    good.append(Observation(f, k, tuple(self.pixel(f, k))))
            if len(good) < 2:
                continue
            self.points[ti] = X
            self.obs[ti] = good
            added += 1
        return added

    def attach(self, f: int) -> None:
        """Add observations in a newly registered frame of existing landmarks."""
        for ti, k in self.frame_tracks[f]:
            if ti not in self.points:
                continue
            err, depth = self._reproj_error(f, self.points[ti], k)
            if depth > 0 and err <= self.config.max_triangulation_error_px:
                self.obs[ti].append(Observation(f, k, tuple(self.pixel(f, k))))

    def register(self, f: int) -> bool:
        pairs = [(ti, k) for ti, k in self.frame_tracks[f] if ti in self.points]
        if len(pairs) < self.config.min_registration_inliers:
            return False
        world = np.array([self.points[ti] for ti, _ in pairs])
        pix = np.array([self.pixel(f, k) for _, k in pairs])
        try:
            res = pnp_ransac(world, pix, self.K, self.config.pnp_ransac)
        except LandmarkLocError:
            return False
        if res.n_inliers < self.config.min_registration_inliers:
            return False
        m = res.inlier_mask
        pose, _, _ = refine_pose(world[m], pix[m], self.K, res.model)
        self.poses[f] = pose
        return True

    def model(self) -> SfmModel:
        landmarks = {ti: Landmark(ti, X, observation_count=len(self.obs[ti])) for ti, X in self.points.items()}
        return SfmModel(landmarks=landmarks, camera_poses=dict(self.poses), intrinsics=self.K,
                        observations={ti: list(o) for ti, o in self.obs.items()}, gauge=self.gauge)

    def adjust(self) -> SfmModel:
        model = bundle_adjust(self.model(), self.config.bundle)
        report = model.last_adjustment
        self.reports.append(report)
        model, dropped = prune_landmarks(model, self.config.prune_factor, self.config.prune_floor_px)
        model.last_adjustment = report
        self.poses = dict(model.camera_poses)
        for ti in dropped:
            self.dead.add(ti)
            self.points.pop(ti, None)
            self.obs.pop(ti, None)
        for ti, lm in model.landmarks.items():
            self.points[ti] = lm.position.copy()
        log.info("bundle adjustment: %d iterations, mean error %.3g px, %d landmarks pruned",
                 report.iterations, report.mean_reprojection_error, len(dropped))
        return model


def incremental_reconstruct(frames, matches, seed: tuple[int, int, Pose], intrinsics: CameraIntrinsics,
                            config: ReconstructionConfig | None = None) -> SfmModel:
    """Grow a reconstruction one frame at a time from a seed pair.

    ``matches`` is anything :func:`build_tracks` accepts. ``seed`` is
    ``(frame_a, frame_b, pose_b_from_a)``; frame_a becomes the origin and the
    seed baseline is scaled to one model unit.
    """
    config = config or ReconstructionConfig()
    by_id = frames if isinstance(frames, dict) else {f.id: f for f in frames}
    tracks = build_tracks(matches)
    fa, fb, rel = seed
    if fa == fb or fa not in by_id or fb not in by_id:
        raise SeedDegenerate(f"seed frames {fa}, {fb} are not two distinct known frames")
    baseline = float(np.linalg.norm(rel.translation))
    if baseline < 1e-12:
        raise SeedDegenerate("seed pair has zero baseline")

    b = _Builder(by_id, tracks, intrinsics, config)
    b.gauge = (fa, fb)
    b.poses[fa] = Pose.identity()
    b.poses[fb] = Pose(rel.rotation, rel.translation / baseline)
    shared = sum(1 for t in tracks if {fa, fb} <= set(t.frame_ids))
    if shared < config.min_seed_tracks:
        raise SeedDegenerate(f"seed pair shares {shared} tracks, need {config.min_seed_tracks}")
    b.triangulate_pending()
    if len(b.points) < config.min_seed_tracks:
        raise SeedDegenerate(f"only {len(b.points)} seed tracks triangulated")

    since_ba = 0
    model = None
    pending = set(by_id) - set(b.poses)
    while pending:
        counts = {f: sum(1 for ti, _ in b.frame_tracks[f] if ti in b.points) for f in pending}
        order = sorted(pending, key=lambda f: (-counts[f], f))
        chosen = None
        for f in order:
            if counts[f] < config.min_registration_inliers:
                break
            if b.register(f):
                chosen = f
                break
        if chosen is None:
            raise RegistrationStalled(f"no remaining frame sees >= {config.min_registration_inliers} "
                                      f"landmarks; unregistered: {sorted(pending)}")
        pending.discard(chosen)
        b.attach(chosen)
        b.triangulate_pending()
        since_ba += 1
        log.debug("registered frame %d (%d landmarks)", chosen, len(b.points))
        if since_ba >= config.ba_interval:
            model = b.adjust()
            since_ba = 0
    if model is None or since_ba:
        model = b.adjust()
    if config.compute_descriptors:
        report = model.last_adjustment
        model = compute_landmark_descriptors(model, by_id)
        model.last_adjustment = report
    model.adjustment_history = tuple(b.reports)
    return model
