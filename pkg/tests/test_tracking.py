import numpy as np
import pytest

from landmarkloc import _reproj
from landmarkloc.errors import EmptyHistory, SingularSystem, TooFewObservations
from landmarkloc.evaluation import compute_ate
from landmarkloc.features import Frame
from landmarkloc.geometry import Pose, compose_projection, project_points, rotation_angle_between, so3_exp
from landmarkloc.simulation import (
    OUTLIER,
    ObservationConfig,
    SceneConfig,
    circle_trajectory,
    generate_scene,
    render_frame,
    render_sequence,
)
from landmarkloc.tracking import (
    Correspondence2D3D,
    LandmarkTable,
    MotionModel,
    TrackerConfig,
    TrackStatus,
    associate_2d3d,
    load_diagnostics,
    optimize_pose,
    predict_pose,
    project_landmarks,
    save_diagnostics,
    track_sequence,
)
from landmarkloc.tracking import _pose_prior_terms

from .conftest import points_in_front, random_pose


# --- motion model -------------------------------------------------------------

def test_predict_examples():
    rng = np.random.default_rng(0)
    X = random_pose(rng)
    assert predict_pose([X], MotionModel.STATIC) is X
    assert predict_pose([random_pose(rng), X], MotionModel.STATIC) is X
    assert predict_pose([X], MotionModel.CONSTANT_SPEED) is X
    # camera centers at x=0 then x=1 (world-to-camera translation is -center)
    p0 = Pose.from_center(np.eye(3), [0.0, 0.0, 0.0])
    p1 = Pose.from_center(np.eye(3), [1.0, 0.0, 0.0])
    assert np.allclose(predict_pose([p0, p1], MotionModel.CONSTANT_SPEED).center, [2, 0, 0], atol=1e-15)
    with pytest.raises(EmptyHistory):
        predict_pose([], MotionModel.STATIC)


def test_constant_speed_reproduces_screw_motion():
    rng = np.random.default_rng(1)
    for _ in range(20):
        step = Pose(so3_exp(rng.standard_normal(3) * 0.2), rng.standard_normal(3))
        poses = [random_pose(rng)]
        for _ in range(3):
            poses.append(step.compose(poses[-1]))
        pred = predict_pose(poses[:3], MotionModel.CONSTANT_SPEED)
        assert np.allclose(pred.matrix(), poses[3].matrix(), atol=1e-12)
    pure = [Pose.from_center(np.eye(3), [0.3 * k, -0.1 * k, 0.05 * k]) for k in range(4)]
    assert np.allclose(predict_pose(pure[:3], MotionModel.CONSTANT_SPEED).matrix(), pure[3].matrix(), atol=1e-12)


# --- projection and association -----------------------------------------------

def _table(positions, descriptors=None):
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if descriptors is None:
        descriptors = np.zeros((len(positions), 2))
    return LandmarkTable(np.arange(len(positions)), positions, descriptors)


def test_project_landmarks_examples(K):
    ids, pix = project_landmarks(_table([[0, 0, 5.0]]), Pose.identity(), K)
    assert list(ids) == [0] and np.allclose(pix, [[320, 240]])
    ids, _ = project_landmarks(_table([[0, 0, -1.0]]), Pose.identity(), K)
    assert len(ids) == 0
    # normalized (0.76, -0.08) is pixel (700, 200), past the right edge
    ids, _ = project_landmarks(_table([[3.04, -0.32, 4.0]]), Pose.identity(), K)
    assert len(ids) == 0


def test_project_landmarks_subset_in_bounds(K):
    rng = np.random.default_rng(2)
    table = _table(rng.uniform(-20, 20, (500, 3)))
    for _ in range(20):
        pose = random_pose(rng)
        ids, pix = project_landmarks(table, pose, K)
        assert set(ids) <= set(table.ids)
        assert np.all(K.in_bounds(pix))
        _, depth = project_points(compose_projection(K, pose), table.positions[ids])
        assert np.all(depth > 0)


def _frame(pixels, descriptors):
    return Frame(0, 0.0, np.atleast_2d(pixels), np.atleast_2d(descriptors))


def test_associate_examples():
    cfg = TrackerConfig(radius_px=5.0, max_descriptor_distance=0.5)
    table = _table([[0, 0, 1.0]], [[1.0, 0.0]])
    proj = (np.array([0]), np.array([[102.0, 100.0]]))
    (c,) = associate_2d3d(_frame([100.0, 100.0], [1.0, 0.1]), proj, table, cfg)
    assert c.landmark_id == 0 and c.descriptor_distance == pytest.approx(0.1)
    proj = (np.array([0]), np.array([[108.0, 100.0]]))
    assert associate_2d3d(_frame([100.0, 100.0], [1.0, 0.1]), proj, table, cfg) == []
    cfg = TrackerConfig(radius_px=5.0, max_descriptor_distance=0.25)
    table = _table([[0, 0, 1.0], [0, 0, 1.0]], [[0.3, 0.0], [0.0, 0.2]])
    proj = (np.array([0, 1]), np.array([[101.0, 100.0], [99.0, 100.0]]))
    (c,) = associate_2d3d(_frame([100.0, 100.0], [0.0, 0.0]), proj, table, cfg)
    assert c.landmark_id == 1


def test_associate_conflict_goes_to_smaller_distance():
    cfg = TrackerConfig(radius_px=5.0, max_descriptor_distance=0.5)
    table = _table([[0, 0, 1.0]], [[0.0, 0.0]])
    proj = (np.array([0]), np.array([[100.0, 100.0]]))
    frame = _frame([[99.0, 100.0], [101.0, 100.0]], [[0.3, 0.0], [0.1, 0.0]])
    (c,) = associate_2d3d(frame, proj, table, cfg)
    assert c.keypoint_index == 1


def test_associate_recovers_labels_at_zero_noise():
    scene = generate_scene(SceneConfig(rng_seed=3))
    traj = circle_trajectory(30.0, 10)
    table = LandmarkTable.from_model(scene.to_map())
    obs = ObservationConfig(rng_seed=3)
    cfg = TrackerConfig()
    for k, pose in enumerate(traj.poses):
        frame, labels = render_frame(scene, pose, obs, k, 0.0)
        corrs = associate_2d3d(frame, project_landmarks(table, pose, obs.intrinsics), table, cfg)
        got = np.full(len(frame), OUTLIER)
        for c in corrs:
            got[c.keypoint_index] = c.landmark_id
        assert np.array_equal(got, labels)


def test_associate_injective():
    scene = generate_scene(SceneConfig(rng_seed=4, descriptor_noise=0.3))
    table = LandmarkTable.from_model(scene.to_map())
    obs = ObservationConfig(rng_seed=4, pixel_noise=3.0, outlier_rate=0.3)
    cfg = TrackerConfig(radius_px=30.0, max_descriptor_distance=1.5)
    for k, pose in enumerate(circle_trajectory(30.0, 5).poses):
        frame, _ = render_frame(scene, pose, obs, k, 0.0)
        corrs = associate_2d3d(frame, project_landmarks(table, pose, obs.intrinsics), table, cfg)
        kps = [c.keypoint_index for c in corrs]
        lms = [c.landmark_id for c in corrs]
        assert len(set(kps)) == len(kps) and len(set(lms)) == len(lms)


# --- pose optimisation --------------------------------------------------------

def _corrs(rng, K, pose, n=50, noise=0.0):
    X = points_in_front(rng, pose, n)
    pix, _ = project_points(compose_projection(K, pose), X)
    pix = pix + rng.normal(0, noise, pix.shape)
    return [Correspondence2D3D(i, p, x, 0.0) for i, (p, x) in enumerate(zip(pix, X))]


def _perturb(pose, rng, deg, meters):
    a = rng.standard_normal(3)
    d = rng.standard_normal(3)
    return Pose.from_center(so3_exp(a / np.linalg.norm(a) * np.radians(deg)) @ pose.rotation,
                            pose.center + meters * d / np.linalg.norm(d))


def test_pose_jacobian_central_differences(K):
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(30):
        pose = random_pose(rng)
        X = points_in_front(rng, pose, 10)
        _, Jp, Jl, _ = _reproj.project_with_jacobians(pose.rotation, pose.translation, X, K)
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            a, b = pose.retract(e), pose.retract(-e)
            fd = (project_points(compose_projection(K, a), X)[0] - project_points(compose_projection(K, b), X)[0]) / (2 * h)
            assert np.max(np.abs(fd - Jp[:, :, j])) < 1e-5
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            P = compose_projection(K, pose)
            fd = (project_points(P, X + e)[0] - project_points(P, X - e)[0]) / (2 * h)
            assert np.max(np.abs(fd - Jl[:, :, j])) < 1e-5


def test_pose_prior_jacobian_central_differences():
    rng = np.random.default_rng(6)
    sigma = np.array([0.1, 0.1, 0.1, 0.5, 0.5, 0.5])
    h = 1e-6
    for _ in range(20):
        prior = random_pose(rng)
        pose = prior.retract(rng.standard_normal(6) * 0.3)
        _, J = _pose_prior_terms(prior, pose, sigma)
        fd = np.empty((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            fd[:, j] = (_pose_prior_terms(prior, pose.retract(e), sigma)[0]
                        - _pose_prior_terms(prior, pose.retract(-e), sigma)[0]) / (2 * h)
        assert np.max(np.abs(fd - J)) < 1e-5


def test_optimize_fixed_point(K):
    rng = np.random.default_rng(7)
    pose = random_pose(rng)
    est, diag = optimize_pose(_corrs(rng, K, pose), K, pose, TrackerConfig())
    assert diag.iterations <= 1 and diag.cost_history[-1] < 1e-18
    assert np.allclose(est.matrix(), pose.matrix(), atol=1e-12)


def test_optimize_recovers_truth(K):
    rng = np.random.default_rng(8)
    for _ in range(10):
        pose = random_pose(rng)
        est, diag = optimize_pose(_corrs(rng, K, pose), K, _perturb(pose, rng, 2.0, 0.1), TrackerConfig())
        assert rotation_angle_between(est.rotation, pose.rotation) < 1e-6
        assert np.linalg.norm(est.center - pose.center) < 1e-6
        h = diag.cost_history
        assert all(b <= a for a, b in zip(h, h[1:]))


def test_optimize_with_outliers(K):
    e_clean, e_dirty = [], []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        pose = random_pose(rng)
        corrs = _corrs(rng, K, pose, n=50, noise=1.0)
        init = _perturb(pose, rng, 1.0, 0.05)
        clean, _ = optimize_pose(corrs, K, init, TrackerConfig())
        dirty = list(corrs)
        for i in rng.choice(50, 10, replace=False):
            c = dirty[i]
            dirty[i] = Correspondence2D3D(c.landmark_id, rng.uniform([0, 0], [640, 480]), c.position, 0.0)
        robust, _ = optimize_pose(dirty, K, init, TrackerConfig(huber_delta_px=2.0))
        e_clean.append(np.linalg.norm(clean.center - pose.center))
        e_dirty.append(np.linalg.norm(robust.center - pose.center))
    # single seeds scatter; compare the average error over all of them
    assert np.mean(e_dirty) < 3 * np.mean(e_clean)


def test_optimize_soft_landmarks_and_pose_prior(K):
    rng = np.random.default_rng(9)
    pose = random_pose(rng)
    corrs = _corrs(rng, K, pose)
    cfg = TrackerConfig(landmark_prior_sigma=0.01, pose_prior_sigma=(0.1, 0.1, 0.1, 1.0, 1.0, 1.0))
    est, diag = optimize_pose(corrs, K, _perturb(pose, rng, 0.5, 0.02), cfg)
    assert diag.landmark_positions.shape == (50, 3)
    assert rotation_angle_between(est.rotation, pose.rotation) < 0.1
    h = diag.cost_history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_optimize_errors(K):
    rng = np.random.default_rng(10)
    pose = Pose.identity()
    with pytest.raises(TooFewObservations):
        optimize_pose(_corrs(rng, K, pose, n=5), K, pose, TrackerConfig())
    # all landmarks on one ray through the camera center
    X = np.outer(np.linspace(2, 8, 12), [0.1, 0.05, 1.0])
    pix, _ = project_points(compose_projection(K, pose), X)
    corrs = [Correspondence2D3D(i, p, x, 0.0) for i, (p, x) in enumerate(zip(pix, X))]
    with pytest.raises(SingularSystem):
        optimize_pose(corrs, K, pose, TrackerConfig())


# --- sequence -----------------------------------------------------------------

@pytest.fixture(scope="module")
def sequence():
    scene = generate_scene(SceneConfig(rng_seed=11))
    traj = circle_trajectory(30.0, 40)
    frames, labels = render_sequence(scene, traj, ObservationConfig(rng_seed=11))
    return scene, traj, frames


def test_track_sequence_noiseless(sequence):
    scene, traj, frames = sequence
    est, diags = track_sequence(frames, scene.to_map(), traj.poses[0])
    assert all(d.status is TrackStatus.TRACKED for d in diags)
    err = np.linalg.norm(est.positions - traj.positions, axis=1)
    assert err.max() < 1e-6


def test_track_sequence_entropy_and_empty_frames(sequence):
    scene, traj, frames = sequence
    frames = list(frames)
    flat = np.zeros(256)
    flat[10] = 100
    f = frames[5]
    frames[5] = Frame(f.id, f.timestamp, f.pixels, f.descriptors, flat)
    f = frames[9]
    frames[9] = Frame(f.id, f.timestamp, np.zeros((0, 2)), np.zeros((0, f.descriptor_dim)), f.histogram)
    cfg = TrackerConfig(motion_model=MotionModel.CONSTANT_SPEED)
    est, diags = track_sequence(frames, scene.to_map(), traj.poses[0], cfg)
    assert diags[5].status is TrackStatus.SKIPPED_ENTROPY
    assert diags[9].status is TrackStatus.SKIPPED_ASSOCIATION
    assert np.allclose(est.poses[9].matrix(), predict_pose(est.poses[7:9], MotionModel.CONSTANT_SPEED).matrix())
    assert all(d.status is TrackStatus.TRACKED for i, d in enumerate(diags) if i not in (5, 9))
    assert compute_ate(traj.subset([i for i in range(40) if i not in (5, 9)]),
                       est.subset([i for i in range(40) if i not in (5, 9)])).ate_pos < 1e-6


def test_diagnostics_csv_roundtrip(sequence, tmp_path):
    scene, traj, frames = sequence
    _, diags = track_sequence(frames[:5], scene.to_map(), traj.poses[0])
    p = tmp_path / "diag.csv"
    save_diagnostics(p, diags)
    back = load_diagnostics(p)
    assert [(d.frame_id, d.status, d.n_assoc, d.n_inliers, d.iterations) for d in back] == \
           [(d.frame_id, d.status, d.n_assoc, d.n_inliers, d.iterations) for d in diags]
    assert p.read_text().splitlines()[0].startswith("frame_id,timestamp,status,n_assoc,n_inliers,iters,rms_px")
