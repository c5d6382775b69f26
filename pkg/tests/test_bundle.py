import numpy as np
import pytest

from landmarkloc.errors import SingularNormalEquations
from landmarkloc.geometry import Pose, rotation_angle_between, so3_exp
from landmarkloc.mapping import BundleConfig, Landmark, Observation, SfmModel, bundle_adjust, prune_landmarks
from landmarkloc.mapping.bundle import _Problem, _tangent_basis

from .conftest import small_world, truth_model


@pytest.fixture(scope="module")
def world():
    return small_world(seed=7, n_poses=8, n_landmarks=150)


@pytest.fixture
def model(world):
    scene, traj, frames, labels, K = world
    return truth_model(scene, traj, frames, labels, K)


def _perturbed(model, rng, angle_deg=1.0, shift=0.05, points=0.0):
    out = model.copy()
    fixed, scale = sorted(model.camera_poses)[:2]
    for f, pose in model.camera_poses.items():
        if f == fixed:
            continue
        axis = rng.standard_normal(3)
        dR = so3_exp(axis / np.linalg.norm(axis) * np.radians(angle_deg))
        if f == scale:
            # the scale camera may only move on its gauge sphere: rotate in place
            out.camera_poses[f] = Pose.from_center(dR @ pose.rotation, pose.center)
            continue
        d = rng.standard_normal(3)
        out.camera_poses[f] = Pose.from_center(dR @ pose.rotation, pose.center + shift * d / np.linalg.norm(d))
    for lm in out.landmarks.values():
        lm.position = lm.position + rng.normal(0, points, 3)
    return out


def test_jacobian_matches_central_differences(model):
    rng = np.random.default_rng(0)
    start = _perturbed(model, rng, points=0.05)
    prob = _Problem(start, BundleConfig())
    state = prob.initial_state(start)
    r0, J = prob.jacobian(state)
    J = J.toarray()
    h = 1e-6
    blocks = rng.choice(len(prob.obs_lid), size=100, replace=False)
    rows = np.concatenate([[2 * b, 2 * b + 1] for b in blocks])
    cols = np.flatnonzero(np.any(J[rows] != 0, axis=0))
    worst = 0.0
    for c in cols:
        e = np.zeros(prob.n_params)
        e[c] = h
        rp, _ = prob.jacobian(prob.retract(state, e))
        rm, _ = prob.jacobian(prob.retract(state, -e))
        fd = (rp.ravel()[rows] - rm.ravel()[rows]) / (2 * h)
        worst = max(worst, np.max(np.abs(fd - J[rows, c])))
    assert worst < 1e-5
    # every block type shows up: 6-dof cameras, the 5-dof scale camera, points
    assert any(n == 5 for _, n in prob.cam_slice.values())
    assert any(n == 6 for _, n in prob.cam_slice.values())


def test_tangent_basis_is_orthonormal():
    rng = np.random.default_rng(1)
    for u in list(np.eye(3)) + list(rng.standard_normal((50, 3))):
        u = u / np.linalg.norm(u)
        B = _tangent_basis(u)
        assert np.allclose(B.T @ B, np.eye(2), atol=1e-12) and np.allclose(u @ B, 0, atol=1e-12)


def test_fixed_point(model):
    out = bundle_adjust(model)
    rep = out.last_adjustment
    assert rep.iterations == 0
    assert rep.final_cost == rep.initial_cost < 1e-12
    assert rep.mean_reprojection_error < 1e-6


def test_recovers_ground_truth_from_perturbation(model):
    rng = np.random.default_rng(2)
    out = bundle_adjust(_perturbed(model, rng, points=0.02), BundleConfig(max_iterations=200))
    rep = out.last_adjustment
    assert rep.converged and rep.final_cost < rep.initial_cost
    assert all(b <= a for a, b in zip(rep.cost_history, rep.cost_history[1:]))
    for f, pose in model.camera_poses.items():
        est = out.camera_poses[f]
        assert rotation_angle_between(est.rotation, pose.rotation) < 1e-6
        assert np.linalg.norm(est.center - pose.center) < 1e-6
    for lid, lm in model.landmarks.items():
        assert np.linalg.norm(out.landmarks[lid].position - lm.position) < 1e-6


def test_gauge_is_preserved(model):
    rng = np.random.default_rng(3)
    start = _perturbed(model, rng, points=0.02)
    out = bundle_adjust(start)
    f0, f1 = sorted(model.camera_poses)[:2]
    assert np.array_equal(out.camera_poses[f0].matrix(), start.camera_poses[f0].matrix())
    b0 = np.linalg.norm(start.camera_poses[f1].center - start.camera_poses[f0].center)
    b1 = np.linalg.norm(out.camera_poses[f1].center - out.camera_poses[f0].center)
    assert b1 == pytest.approx(b0, rel=1e-12)


def test_noisy_mean_error_matches_independent_value(world):
    scene, traj, frames, labels, K = small_world(seed=8, n_poses=8, n_landmarks=150, pixel_noise=0.7)
    model = truth_model(scene, traj, frames, labels, K)
    out = bundle_adjust(model)
    assert out.last_adjustment.mean_reprojection_error == pytest.approx(out.mean_reprojection_error(), abs=1e-10)
    assert out.last_adjustment.final_cost < out.last_adjustment.initial_cost


def test_singular_system_names_variable(K):
    # camera 1 observes nothing, so the normal equations carry no information on it
    lms = {0: Landmark(0, [0.0, 0.0, 5.0])}
    poses = {0: Pose.identity(), 1: Pose(np.eye(3), [-1.0, 0.0, 0.0]), 2: Pose(np.eye(3), [-0.5, 0.0, 0.0])}
    obs = {0: [Observation(0, 0, (320.0, 240.0)), Observation(2, 0, (275.0, 241.0))]}
    model = SfmModel(lms, poses, K, observations=obs)
    with pytest.raises(SingularNormalEquations) as e:
        bundle_adjust(model)
    assert e.value.variable == "camera 1"


def test_prune_landmarks(model):
    bad = model.copy()
    lid = sorted(bad.landmarks)[0]
    bad.landmarks[lid].position = bad.landmarks[lid].position + [0.5, 0.5, 0.0]
    lone = sorted(bad.landmarks)[1]
    bad.observations[lone] = bad.observations[lone][:1]
    out, dropped = prune_landmarks(bad)
    assert dropped == [lid, lone]
    assert lid not in out.landmarks and lone not in out.observations
    assert len(out.landmarks) == len(model.landmarks) - 2
