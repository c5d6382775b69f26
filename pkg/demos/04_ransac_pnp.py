"""RANSAC iteration budget and camera resectioning with 30 % outliers."""

import numpy as np

from landmarkloc.geometry import CameraIntrinsics, Pose, compose_projection, project_points, rotation_angle_between, so3_exp
from landmarkloc.robust import RansacConfig, pnp_ransac, ransac_iterations

print("iterations for p = 0.99:")
for s in (6, 8):
    print(f"  s={s}: " + ", ".join(f"e={e:.1f} -> {ransac_iterations(0.99, e, s)}" for e in (0.1, 0.3, 0.5)))

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
rng = np.random.default_rng(0)
pose = Pose(so3_exp([0.1, -0.2, 0.05]), np.array([0.3, -0.1, 0.5]))
X = rng.uniform([-2, -2, 4], [2, 2, 10], (100, 3))
X = (X - pose.translation) @ pose.rotation  # express in world coordinates
x, _ = project_points(compose_projection(K, pose), X)
x += rng.normal(0, 0.5, x.shape)
x[70:] = rng.uniform([0, 0], [640, 480], (30, 2))

res = pnp_ransac(X, x, K, RansacConfig(sample_size=6, inlier_threshold=4.0, rng_seed=0))
print(f"{res.n_inliers} inliers after {res.iterations_run} iterations "
      f"({np.sum(res.inlier_mask[:70])} of 70 true, {np.sum(res.inlier_mask[70:])} false)")
print(f"rotation error {rotation_angle_between(res.model.rotation, pose.rotation):.4f} deg, "
      f"translation error {np.linalg.norm(res.model.translation - pose.translation):.4f} m")
