"""Map data structures: tracks, landmarks and the reconstructed model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraIntrinsics, DistortionCoeffs, Pose, SimilarityTransform, project_points


@dataclass
class Track:
    """Keypoints across frames believed to image one scene point.

    ``observations`` holds ``(frame_id, keypoint_index)`` pairs, at most one
    per frame.
    """

    observations: list[tuple[int, int]]
    point_id: int | None = None

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def frame_ids(self) -> list[int]:
        return [f for f, _ in self.observations]


@dataclass(eq=False)
class Landmark:
    id: int
    position: np.ndarray
    descriptor: np.ndarray | None = None
    observation_count: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.descriptor is not None:
            self.descriptor = np.asarray(self.descriptor, dtype=float).ravel()


@dataclass(frozen=True)
class Observation:
    """One measurement of a landmark: which frame, which keypoint, where."""

    frame_id: int
    keypoint_index: int
    pixel: tuple[float, float]


@dataclass(frozen=True)
class AdjustmentReport:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: tuple[float, ...]
    mean_reprojection_error: float
    converged: bool


@dataclass(eq=False)
class SfmModel:
    """A sparse reconstruction: landmark positions with mean descriptors plus
    the camera poses that observed them (world-to-camera)."""

    landmarks: dict[int, Landmark]
    camera_poses: dict[int, Pose]
    intrinsics: CameraIntrinsics
    registration: SimilarityTransform | None = None
    observations: dict[int, list[Observation]] = field(default_factory=dict)
    distortion: DistortionCoeffs | None = None
    last_adjustment: AdjustmentReport | None = None
    # every adjustment run while the model was built, oldest first
    adjustment_history: tuple[AdjustmentReport, ...] = ()
    # (fixed frame, scale frame) used as the bundle-adjustment gauge
    gauge: tuple[int, int] | None = None

    @property
    def descriptor_dim(self) -> int | None:
        for lm in self.landmarks.values():
            if lm.descriptor is not None:
                return len(lm.descriptor)
        return None

    def landmark_ids(self) -> np.ndarray:
        return np.array(sorted(self.landmarks), dtype=int)

    def positions(self, ids=None) -> np.ndarray:
        ids = self.landmark_ids() if ids is None else ids
        return np.array([self.landmarks[i].position for i in ids]).reshape(-1, 3)

    def descriptors(self, ids=None) -> np.ndarray:
        ids = self.landmark_ids() if ids is None else ids
        return np.array([self.landmarks[i].descriptor for i in ids])

    def reprojection_errors(self) -> dict[int, np.ndarray]:
        """Per-landmark pixel errors of every observation, via plain projection."""
        out = {}
        for lid, obs in self.observations.items():
            X = self.landmarks[lid].position
            errs = []
            for o in obs:
                pose = self.camera_poses[o.frame_id]
                P = self.intrinsics.K @ np.column_stack([pose.rotation, pose.translation])
                pix, _ = project_points(P, X[None])
                errs.append(float(np.linalg.norm(pix[0] - np.asarray(o.pixel))))
            out[lid] = np.array(errs)
        return out

    def mean_reprojection_error(self) -> float:
        errs = [e for v in self.reprojection_errors().values() for e in v]
        return float(np.mean(errs)) if errs else 0.0

    def copy(self) -> SfmModel:
        return SfmModel(
            landmarks={
                i: Landmark(lm.id, lm.position.copy(), None if lm.descriptor is None else lm.descriptor.copy(),
                            lm.observation_count)
                for i, lm in self.landmarks.items()
            },
            camera_poses=dict(self.camera_poses),
            intrinsics=self.intrinsics,
            registration=self.registration,
            observations={i: list(v) for i, v in self.observations.items()},
            distortion=self.distortion,
            last_adjustment=self.last_adjustment,
            adjustment_history=self.adjustment_history,
            gauge=self.gauge,
        )
