"""Landmark descriptors and model registration."""

from __future__ import annotations

import math

import numpy as np

from ..errors import MissingDescriptor
from ..features import Frame
from ..geometry import SimilarityTransform, apply_similarity, fit_similarity
from .model import SfmModel


def mean_descriptor(descriptors) -> np.ndarray:
    """Elementwise mean with exactly rounded sums, so the result does not
    depend on the order of the observations.

    Each column is offset by its minimum first, which makes the mean of
    identical descriptors return them bit for bit.
    """
    D = np.atleast_2d(np.asarray(descriptors, dtype=float))
    n = len(D)
    lo = D.min(axis=0)
    return np.array([m + math.fsum(col - m) / n for col, m in zip(D.T, lo)])


def compute_landmark_descriptors(model: SfmModel, frames) -> SfmModel:
    """Assign each landmark the mean descriptor of the keypoints observing it."""
    by_id = frames if isinstance(frames, dict) else {f.id: f for f in frames}
    out = model.copy()
    for lid, lm in out.landmarks.items():
        obs = model.observations.get(lid, [])
        if not obs:
            raise MissingDescriptor(f"landmark {lid} has no observations")
        descs = []
        for o in obs:
            frame: Frame | None = by_id.get(o.frame_id)
            if frame is None or not 0 <= o.keypoint_index < len(frame):
                raise MissingDescriptor(f"landmark {lid}: no keypoint {o.keypoint_index} in frame {o.frame_id}")
            descs.append(frame.descriptors[o.keypoint_index])
        lm.descriptor = mean_descriptor(descs)
        lm.observation_count = len(obs)
    return out


def register_model(model: SfmModel, model_points, world_points) -> tuple[SfmModel, float]:
    """Fit the similarity taking model coordinates to world coordinates.

    The transform is stored on the returned model (not applied); the RMS
    residual of the fit is returned alongside.
    """
    T, rms = fit_similarity(model_points, world_points, with_scale=True)
    out = model.copy()
    out.registration = T
    return out, rms


def apply_registration(model: SfmModel) -> SfmModel:
    """Move landmarks and cameras into the world frame of ``model.registration``."""
    if model.registration is None:
        return model.copy()
    T: SimilarityTransform = model.registration
    out = model.copy()
    for lm in out.landmarks.values():
        lm.position = apply_similarity(T, lm.position)
    out.camera_poses = {k: apply_similarity(T, p) for k, p in model.camera_poses.items()}
    out.registration = None
    return out

