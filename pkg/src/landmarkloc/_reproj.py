"""Reprojection residuals and their analytic Jacobians.

Shared by bundle adjustment and pose tracking. Pose Jacobians are taken with
respect to the left retraction of :meth:`landmarkloc.geometry.Pose.retract`,
for which ``X_cam`` moves by ``omega x X_cam + v`` to first order.
"""

import numpy as np

from .geometry import CameraIntrinsics


def camera_points(R, t, X):
    return np.asarray(X, dtype=float) @ np.asarray(R).T + np.asarray(t)


def project_with_jacobians(R, t, X, K: CameraIntrinsics):
    """Project world points ``X`` (N, 3) through pose ``(R, t)``.

    Returns ``(pixels (N,2), J_pose (N,2,6), J_point (N,2,3), depth (N,))``.
    """
    Xc = camera_points(R, t, X)
    Xc = np.atleast_2d(Xc)
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    iz = 1.0 / z
    xn, yn = x * iz, y * iz
    pix = np.stack([K.fx * xn + K.skew * yn + K.cx, K.fy * yn + K.cy], axis=1)

    n = len(Xc)
    J_proj = np.zeros((n, 2, 3))
    J_proj[:, 0, 0] = K.fx * iz
    J_proj[:, 0, 1] = K.skew * iz
    J_proj[:, 0, 2] = -(K.fx * xn + K.skew * yn) * iz
    J_proj[:, 1, 1] = K.fy * iz
    J_proj[:, 1, 2] = -K.fy * yn * iz

    # d Xc / d omega = -[Xc]_x
    neg_skew = np.zeros((n, 3, 3))
    neg_skew[:, 0, 1] = z
    neg_skew[:, 0, 2] = -y
    neg_skew[:, 1, 0] = -z
    neg_skew[:, 1, 2] = x
    neg_skew[:, 2, 0] = y
    neg_skew[:, 2, 1] = -x
    J_pose = np.empty((n, 2, 6))
    J_pose[:, :, :3] = J_proj @ neg_skew
    J_pose[:, :, 3:] = J_proj
    J_point = J_proj @ np.asarray(R)
    return pix, J_pose, J_point, z


def huber_cost(norms, delta: float) -> np.ndarray:
    """Huber loss of residual norms, scaled so small residuals cost ``r^2 / 2``."""
    norms = np.asarray(norms, dtype=float)
    return np.where(norms <= delta, 0.5 * norms**2, delta * (norms - 0.5 * delta))
