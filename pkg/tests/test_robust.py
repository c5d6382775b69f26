import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from landmarkloc.errors import DegenerateConfiguration, InvalidRatio, NoModelFound, NotEnoughData, TooFewPoints
from landmarkloc.geometry import (
    Pose,
    SimilarityTransform,
    apply_similarity,
    compose_projection,
    project_points,
    rotation_angle_between,
)
from landmarkloc.robust import (
    RansacConfig,
    estimate_fundamental_8pt,
    fundamental_ransac,
    huber_weight,
    pnp_ransac,
    refine_pnp,
    ransac_iterations,
    reprojection_residuals,
    run_ransac,
    sampson_distance,
    solve_pnp_dlt,
)

from .conftest import points_in_front, random_pose, random_rotation


# --- iteration count ----------------------------------------------------------

@pytest.mark.parametrize("p, e, s, n", [
    (0.99, 0.5, 6, 293),
    (0.99, 0.5, 2, 17),
    (0.95, 0.3, 8, 51),     # frozen from mpmath at 50 digits
    (0.999, 0.2, 4, 14),
])
def test_ransac_iterations_values(p, e, s, n):
    assert ransac_iterations(p, e, s) == n


def test_ransac_iterations_edges():
    assert ransac_iterations(0.99, 0.0, 6) == 1
    with pytest.raises(InvalidRatio):
        ransac_iterations(0.99, 1.0, 6)
    assert ransac_iterations(0.99, 0.99, 8, max_iterations=500) == 500


def test_ransac_iterations_monotone_grid():
    ps = np.linspace(0.5, 0.999, 12)
    es = np.linspace(0.0, 0.9, 19)
    for s in (1, 3, 6, 8):
        N = np.array([[ransac_iterations(p, e, s, max_iterations=10**9) for e in es] for p in ps])
        assert np.all(np.diff(N, axis=0) >= 0)  # nondecreasing in p
        assert np.all(np.diff(N, axis=1) >= 0)  # nonincreasing in inlier ratio


# --- generic engine -----------------------------------------------------------

def _line_solver(d):
    (x1, y1), (x2, y2) = d
    if x1 == x2:
        return None
    a = (y2 - y1) / (x2 - x1)
    return np.array([a, y1 - a * x1])


def _line_refit(d):
    return np.polyfit(d[:, 0], d[:, 1], 1)


def _line_residual(m, d):
    return np.abs(d[:, 1] - (m[0] * d[:, 0] + m[1]))


def test_ransac_exact_line():
    x = np.linspace(-3, 3, 40)
    data = np.column_stack([x, 0.7 * x - 1.3])
    res = run_ransac(data, _line_solver, _line_residual, RansacConfig(inlier_threshold=1e-6, sample_size=2),
                     refine_solver=_line_refit)
    assert res.inlier_mask.all() and res.final_outlier_ratio == 0
    assert np.allclose(res.model, [0.7, -1.3], atol=1e-9)


def test_ransac_errors():
    cfg = RansacConfig(sample_size=2, inlier_threshold=0.1)
    with pytest.raises(NotEnoughData):
        run_ransac(np.zeros((1, 2)), _line_solver, _line_residual, cfg)
    with pytest.raises(NoModelFound):
        run_ransac(np.zeros((5, 2)), lambda d: None, _line_residual, cfg)


def _plane_solver(d):
    A = np.column_stack([d[:, :2], np.ones(len(d))])
    sol, *_ = np.linalg.lstsq(A, d[:, 2], rcond=None)
    return sol


def _plane_residual(m, d):
    return np.abs(d[:, 2] - d[:, :2] @ m[:2] - m[2])


def _plane_instance(seed):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-5, 5, (100, 2))
    z = 0.3 * xy[:, 0] - 0.5 * xy[:, 1] + 2.0
    z[:70] += rng.normal(0, 0.01, 70)
    z[70:] = rng.uniform(-10, 10, 30)
    return np.column_stack([xy, z]), np.arange(100) < 70


def test_ransac_plane_recovery_over_seeds():
    for seed in range(50):
        data, truth = _plane_instance(seed)
        res = run_ransac(data, _plane_solver, _plane_residual,
                         RansacConfig(sample_size=3, inlier_threshold=0.05, rng_seed=seed), refine_solver=_plane_solver)
        assert np.sum(res.inlier_mask & truth) >= 68
        assert np.sum(res.inlier_mask & ~truth) <= 2


def test_ransac_reproducible():
    data, _ = _plane_instance(3)
    cfg = RansacConfig(sample_size=3, inlier_threshold=0.05, rng_seed=11)
    a = run_ransac(data, _plane_solver, _plane_residual, cfg)
    b = run_ransac(data, _plane_solver, _plane_residual, cfg)
    assert np.array_equal(a.model, b.model) and np.array_equal(a.inlier_mask, b.inlier_mask)
    assert a.iterations_run == b.iterations_run


# --- PnP ----------------------------------------------------------------------

def _pnp_instance(rng, K, n=8):
    pose = random_pose(rng, scale=2.0)
    X = points_in_front(rng, pose, n)
    x, _ = project_points(compose_projection(K, pose), X)
    return pose, X, x


def test_pnp_noiseless(K):
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose, X, x = _pnp_instance(rng, K)
        P = solve_pnp_dlt(X, x)
        assert reprojection_residuals(P, X, x).max() < 1e-6
        est = solve_pnp_dlt(X, x, K)
        assert rotation_angle_between(est.rotation, pose.rotation) < 1e-6
        assert np.linalg.norm(est.translation - pose.translation) < 1e-6


def test_pnp_errors(K):
    rng = np.random.default_rng(1)
    _, X, x = _pnp_instance(rng, K)
    with pytest.raises(TooFewPoints):
        solve_pnp_dlt(X[:5], x[:5])
    with pytest.raises(DegenerateConfiguration):
        solve_pnp_dlt(np.repeat(X[:1], 8, 0), np.repeat(x[:1], 8, 0))


def test_pnp_similarity_invariance(K):
    rng = np.random.default_rng(2)
    for _ in range(10):
        pose, X, x = _pnp_instance(rng, K, n=10)
        x = x + rng.normal(0, 0.5, x.shape)
        T = SimilarityTransform(rng.uniform(0.5, 3), random_rotation(rng), rng.standard_normal(3))
        r0 = reprojection_residuals(solve_pnp_dlt(X, x), X, x)
        Xs = apply_similarity(T, X)
        r1 = reprojection_residuals(solve_pnp_dlt(Xs, x), Xs, x)
        assert np.allclose(r0, r1, atol=1e-9)


def test_pnp_ransac_70_30(K):
    rng = np.random.default_rng(3)
    pose, X, x = _pnp_instance(rng, K, n=100)
    truth = np.arange(100) < 70
    x[~truth] = rng.uniform([0, 0], [640, 480], (30, 2))
    res = pnp_ransac(X, x, K, RansacConfig(sample_size=6, inlier_threshold=2.0, rng_seed=0))
    assert np.all(res.inlier_mask[truth])
    assert rotation_angle_between(res.model.rotation, pose.rotation) < 1e-6


def test_refine_pnp_is_least_squares(K):
    rng = np.random.default_rng(5)
    for _ in range(10):
        pose, X, x = _pnp_instance(rng, K, n=40)
        x = x + rng.normal(0, 1.0, x.shape)
        dlt = solve_pnp_dlt(X, x, K)
        ref = refine_pnp(X, x, K, dlt)
        r_dlt, r_ref = reprojection_residuals(dlt, X, x, K), reprojection_residuals(ref, X, x, K)
        assert np.sum(r_ref**2) <= np.sum(r_dlt**2)
        # stationary: a small perturbation in any direction cannot lower the error
        for k in range(6):
            for h in (1e-5, -1e-5):
                dx = np.zeros(6)
                dx[k] = h
                assert np.sum(reprojection_residuals(ref.retract(dx), X, x, K) ** 2) >= np.sum(r_ref**2) - 1e-9
    # noiseless data is a fixed point
    pose, X, x = _pnp_instance(rng, K)
    ref = refine_pnp(X, x, K, solve_pnp_dlt(X, x, K))
    assert reprojection_residuals(ref, X, x, K).max() < 1e-8


# --- fundamental matrix -------------------------------------------------------

def _two_view(rng, K, n, n_outliers=0):
    p1 = Pose.identity()
    p2 = Pose(random_rotation(rng, 0.2), np.array([1.0, 0.1, 0.05]))
    X = points_in_front(rng, p1, n)
    x1, _ = project_points(compose_projection(K, p1), X)
    x2, _ = project_points(compose_projection(K, p2), X)
    if n_outliers:
        # a replacement near its epipolar line is not an outlier geometrically;
        # within a few pixels a 7-inlier + 1-outlier sample can absorb it, so
        # resample until it is well clear of the line
        F_true = estimate_fundamental_8pt(x1, x2)
        for i in range(n - n_outliers, n):
            while True:
                x2[i] = rng.uniform([0, 0], [640, 480])
                if sampson_distance(F_true, x1[i:i + 1], x2[i:i + 1])[0] > 10.0:
                    break
    return x1, x2


def test_fundamental_noiseless(K):
    rng = np.random.default_rng(4)
    x1, x2 = _two_view(rng, K, 20)
    F = estimate_fundamental_8pt(x1, x2)
    assert sampson_distance(F, x1, x2).max() < 1e-8
    sv = np.linalg.svd(F, compute_uv=False)
    assert sv[2] < 1e-12 * sv[0]
    with pytest.raises(TooFewPoints):
        estimate_fundamental_8pt(x1[:7], x2[:7])


def test_fundamental_ransac_labels(K):
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        x1, x2 = _two_view(rng, K, 100, n_outliers=30)
        truth = np.arange(100) < 70
        res = fundamental_ransac(x1, x2, RansacConfig(sample_size=8, inlier_threshold=1.5, rng_seed=seed))
        assert np.array_equal(res.inlier_mask, truth)


# --- Huber --------------------------------------------------------------------

def test_huber_examples():
    assert huber_weight(0.0, 1.0) == 1.0
    assert huber_weight(1.5, 1.5) == 1.0
    assert huber_weight(3.0, 1.5) == 0.5
    assert huber_weight(1.0, 2.0) == 1.0


@given(st.lists(st.floats(0, 0.99), min_size=3, max_size=30))
def test_huber_below_delta_is_plain_least_squares(rs):
    r = np.array(rs)
    w = huber_weight(r, 1.0)
    assert np.array_equal(w, np.ones_like(r))
    # weighted mean equals plain mean when every weight is one
    assert np.sum(w * r) / np.sum(w) == np.mean(r)
