import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from landmarkloc.geometry import CameraIntrinsics, Pose, so3_exp

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def K():
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def random_rotation(rng, max_angle=np.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def random_pose(rng, max_angle=np.pi, scale=1.0):
    return Pose(random_rotation(rng, max_angle), rng.standard_normal(3) * scale)


def points_in_front(rng, pose, n, depth=(4.0, 10.0), spread=2.0):
    """World points that land at positive depth in front of ``pose``."""
    cam = np.column_stack([rng.uniform(-spread, spread, (n, 2)), rng.uniform(*depth, n)])
    return (cam - pose.translation) @ pose.rotation


def small_world(seed=0, n_landmarks=200, n_poses=24, pixel_noise=0.0, arc=np.pi / 2, **obs_kw):
    """Scene, arc trajectory and rendered frames for mapping tests."""
    from landmarkloc.simulation import ObservationConfig, SceneConfig, circle_trajectory, generate_scene, render_sequence

    scene = generate_scene(SceneConfig(n_landmarks=n_landmarks, rng_seed=seed))
    traj = circle_trajectory(30.0, n_poses, arc=arc)
    obs = ObservationConfig(rng_seed=seed, pixel_noise=pixel_noise, **obs_kw)
    frames, labels = render_sequence(scene, traj, obs)
    return scene, traj, frames, labels, obs.intrinsics


def truth_model(scene, traj, frames, labels, K):
    """The exact model: true poses and positions, observations from labels."""
    from landmarkloc.mapping import Landmark, Observation, SfmModel
    from landmarkloc.simulation import OUTLIER

    obs = {}
    for f, lab in zip(frames, labels):
        for k, lid in enumerate(lab):
            if lid != OUTLIER:
                obs.setdefault(int(lid), []).append(Observation(f.id, k, tuple(f.pixels[k])))
    obs = {lid: o for lid, o in obs.items() if len(o) >= 2}
    lms = {lid: Landmark(lid, scene.positions[lid], scene.descriptors[lid], len(o)) for lid, o in obs.items()}
    poses = {f.id: p for f, p in zip(frames, traj.poses)}
    return SfmModel(lms, poses, K, observations=obs)
