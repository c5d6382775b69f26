"""Adaptive RANSAC with pluggable solvers, DLT Perspective-n-Point, the
normalized 8-point fundamental matrix and Huber weighting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InvalidRatio,
    LandmarkLocError,
    NoModelFound,
    NotEnoughData,
    TooFewPoints,
)
from . import _reproj
from ._lm import damped_gauss_newton
from .geometry import CameraIntrinsics, Pose, nearest_rotation, project_points


@dataclass(frozen=True)
class RansacConfig:
    success_prob: float = 0.99
    inlier_threshold: float = 2.0
    sample_size: int = 6
    max_iterations: int = 10_000
    min_iterations: int = 1
    rng_seed: int = 0
    # starting outlier ratio before any inliers are counted
    initial_outlier_ratio: float = 0.5

    def __post_init__(self):
        if not 0 < self.success_prob < 1:
            raise ValueError("success_prob must lie in (0, 1)")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if self.min_iterations < 1 or self.sample_size < 1:
            raise ValueError("min_iterations and sample_size must be >= 1")
        if self.max_iterations < self.min_iterations:
            raise ValueError("max_iterations must be >= min_iterations")


@dataclass
class RansacResult:
    model: Any
    inlier_mask: np.ndarray
    iterations_run: int
    final_outlier_ratio: float

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def ransac_iterations(p: float, e: float, s: int, max_iterations: int = 10_000) -> int:
    """Number of samples needed to draw one all-inlier set with probability ``p``.

    ``e`` is the outlier ratio and ``s`` the sample size.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if s < 1:
        raise ValueError("s must be >= 1")
    if e >= 1:
        raise InvalidRatio("outlier ratio must be < 1")
    if e < 0:
        raise ValueError("outlier ratio must be >= 0")
    if e == 0:
        return 1
    w = (1.0 - e) ** s
    denom = math.log1p(-w)
    if denom == 0.0:
        return max_iterations
    n = math.ceil(math.log(1.0 - p) / denom)
    return int(min(max(n, 1), max_iterations))


def _take(data, idx):
    if isinstance(data, tuple):
        return tuple(np.asarray(d)[idx] for d in data)
    return np.asarray(data)[idx]


def _length(data) -> int:
    return len(data[0]) if isinstance(data, tuple) else len(data)


def run_ransac(
    data,
    minimal_solver: Callable,
    residual_fn: Callable,
    config: RansacConfig,
    refine_solver: Callable | None = None,
) -> RansacResult:
    """Generic adaptive RANSAC.

    ``data`` is an array or a tuple of equally long arrays. ``minimal_solver``
    maps a sample to a model, a list of candidate models, or ``None``;
    ``residual_fn(model, data)`` returns one residual per datum. When
    ``refine_solver`` is given the winner is refit on its inliers (repeated
    while the inlier set grows).
    """
    n = _length(data)
    s = config.sample_size
    if n < s:
        raise NotEnoughData(f"need at least {s} data points, got {n}")
    rng = np.random.default_rng(config.rng_seed)
    thr = config.inlier_threshold

    needed = ransac_iterations(config.success_prob, config.initial_outlier_ratio, s, config.max_iterations)
    best_model, best_mask, best_count = None, None, -1
    it = 0
    while it < config.max_iterations and (it < config.min_iterations or it < needed):
        it += 1
        sample = rng.choice(n, size=s, replace=False)
        try:
            models = minimal_solver(_take(data, sample))
        except (LandmarkLocError, np.linalg.LinAlgError):
            continue
        if models is None:
            continue
        if not isinstance(models, list):
            models = [models]
        for model in models:
            res = np.asarray(residual_fn(model, data))
            mask = res <= thr
            count = int(mask.sum())
            if count > best_count:
                best_model, best_mask, best_count = model, mask, count
                e = 1.0 - count / n
                if e < 1.0:
                    needed = ransac_iterations(config.success_prob, e, s, config.max_iterations)

    if best_model is None or best_count < s:
        raise NoModelFound(f"no model reached {s} inliers in {it} iterations")

    if refine_solver is not None:
        for _ in range(5):
            try:
                refit = refine_solver(_take(data, np.flatnonzero(best_mask)))
            except (LandmarkLocError, np.linalg.LinAlgError):
                break
            mask = np.asarray(residual_fn(refit, data)) <= thr
            if mask.sum() < best_count:
                break
            grew = mask.sum() > best_count
            best_model, best_mask, best_count = refit, mask, int(mask.sum())
            if not grew:
                break

    return RansacResult(best_model, best_mask, it, 1.0 - best_count / n)


# ---------------------------------------------------------------------------
# Perspective-n-Point by DLT
# ---------------------------------------------------------------------------

def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(dim)."""
    dim = pts.shape[1]
    c = pts.mean(0)
    mean_dist = np.linalg.norm(pts - c, axis=1).mean()
    scale = math.sqrt(dim) / mean_dist if mean_dist > 0 else 1.0
    T = np.eye(dim + 1)
    T[:dim, :dim] *= scale
    T[:dim, dim] = -scale * c
    return T


def solve_pnp_dlt(world, pixels, K: CameraIntrinsics | None = None):
    """Camera from >= 6 2D-3D correspondences by the direct linear transform.

    Each point contributes three rows ``p_i X - lambda x_i = 0`` with its own
    unknown depth ``lambda``; the stacked system is solved for its smallest
    right singular vector. Data are Hartley-normalized first.

    Without ``K`` the 3x4 projection matrix is returned, scaled so its third
    row has a unit 3-vector part and recovered depths are mostly positive.
    With ``K`` the matrix is decomposed into a :class:`Pose`.
    """
    X = np.asarray(world, dtype=float).reshape(-1, 3)
    x = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(X)
    if n != len(x):
        raise ValueError("world and pixel arrays differ in length")
    if n < 6:
        raise TooFewPoints(f"DLT needs at least 6 correspondences, got {n}")

    U = _normalizing_transform(X)
    T = _normalizing_transform(x)
    Xh = np.column_stack([X, np.ones(n)]) @ U.T
    xh = np.column_stack([x, np.ones(n)]) @ T.T

    M = np.zeros((3 * n, 12 + n))
    rows = 3 * np.arange(n)
    for j in range(3):
        M[rows + j, 4 * j:4 * j + 4] = Xh
        M[rows + j, 12 + np.arange(n)] = -xh[:, j]
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    if len(sv) < 2 or sv[-2] - sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration("DLT null space is not one-dimensional (coplanar or repeated points?)")
    v = Vt[-1]
    if np.sum(v[12:] > 0) < np.sum(v[12:] < 0):
        v = -v
    P = np.linalg.inv(T) @ v[:12].reshape(3, 4) @ U
    P /= np.linalg.norm(P[2, :3])
    if K is None:
        return P

    A = K.K_inv @ P
    M3 = A[:, :3]
    alpha = np.linalg.svd(M3, compute_uv=False).mean()
    R = nearest_rotation(M3 / alpha)
    return Pose(R, A[:, 3] / alpha)


def reprojection_residuals(model, world, pixels, K: CameraIntrinsics | None = None) -> np.ndarray:
    """Pixel distance between observations and the projection under ``model``.

    ``model`` is a 3x4 matrix or a :class:`Pose` (then ``K`` is required).
    Points with nonpositive depth get an infinite residual.
    """
    P = model if not isinstance(model, Pose) else K.K @ np.column_stack([model.rotation, model.translation])
    proj, depth = project_points(P, world)
    res = np.linalg.norm(proj - np.asarray(pixels, dtype=float), axis=1)
    res[~(depth > 0)] = np.inf
    return res


def refine_pnp(world, pixels, K: CameraIntrinsics, initial: Pose, max_iterations: int = 10) -> Pose:
    """Least-squares pose: Gauss-Newton on the plain squared reprojection error.

    The calibrated DLT projects a noisy 3x3 block onto SO(3), which is not a
    least-squares fit in the image; this polishes it.
    """
    X = np.asarray(world, dtype=float).reshape(-1, 3)
    meas = np.asarray(pixels, dtype=float).reshape(-1, 2)

    def cost(pose):
        pix, _ = project_points(K.K @ np.column_stack([pose.rotation, pose.translation]), X)
        return 0.5 * float(np.sum((pix - meas) ** 2))

    def linearize(pose):
        pix, Jp, _, _ = _reproj.project_with_jacobians(pose.rotation, pose.translation, X, K)
        r = pix - meas
        return np.einsum("nai,naj->ij", Jp, Jp), np.einsum("nai,na->i", Jp, r)

    info = damped_gauss_newton(initial, cost, linearize, lambda pose, dx: pose.retract(dx),
                               max_iterations=max_iterations, rel_tol=1e-12, cost_floor=1e-24)
    return info.state


def pnp_ransac(world, pixels, K: CameraIntrinsics, config: RansacConfig | None = None) -> RansacResult:
    """RANSAC over :func:`solve_pnp_dlt` with a pixel reprojection residual.

    The final refit on the inliers is the DLT followed by :func:`refine_pnp`.
    """
    config = config or RansacConfig(sample_size=6, inlier_threshold=4.0)
    data = (np.asarray(world, dtype=float), np.asarray(pixels, dtype=float))

    def solver(d):
        return solve_pnp_dlt(d[0], d[1], K)

    def refine(d):
        return refine_pnp(d[0], d[1], K, solve_pnp_dlt(d[0], d[1], K))

    def residual(model, d):
        return reprojection_residuals(model, d[0], d[1], K)

    return run_ransac(data, solver, residual, config, refine_solver=refine)


# ---------------------------------------------------------------------------
# Fundamental matrix
# ---------------------------------------------------------------------------

def estimate_fundamental_8pt(x1, x2) -> np.ndarray:
    """Normalized 8-point algorithm with rank-2 enforcement.

    Returns ``F`` (unit Frobenius norm) with ``x2^T F x1 = 0`` for matches.
    """
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    n = len(x1)
    if n != len(x2):
        raise ValueError("match arrays differ in length")
    if n < 8:
        raise TooFewPoints(f"8-point algorithm needs at least 8 matches, got {n}")
    T1 = _normalizing_transform(x1)
    T2 = _normalizing_transform(x2)
    a = np.column_stack([x1, np.ones(n)]) @ T1.T
    b = np.column_stack([x2, np.ones(n)]) @ T2.T
    A = np.einsum("ni,nj->nij", b, a).reshape(n, 9)
    _, sv, Vt = np.linalg.svd(A)
    sv9 = np.zeros(9)
    sv9[:len(sv)] = sv
    if sv9[7] <= 1e-9 * sv9[0]:
        raise DegenerateConfiguration("matches do not constrain F uniquely")
    F = Vt[-1].reshape(3, 3)
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    # re-impose exact rank 2 after denormalization round-off
    U, S, Vt = np.linalg.svd(F)
    F = U @ np.diag([S[0], S[1], 0.0]) @ Vt
    return F / np.linalg.norm(F)


def sampson_distance(F, x1, x2) -> np.ndarray:
    """First-order geometric error of each match, in pixels."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    a = np.column_stack([x1, np.ones(len(x1))])
    b = np.column_stack([x2, np.ones(len(x2))])
    Fa = a @ F.T
    Ftb = b @ F
    num = np.sum(b * Fa, axis=1) ** 2
    den = Fa[:, 0] ** 2 + Fa[:, 1] ** 2 + Ftb[:, 0] ** 2 + Ftb[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    return np.sqrt(d2)


def fundamental_ransac(x1, x2, config: RansacConfig | None = None) -> RansacResult:
    config = config or RansacConfig(sample_size=8, inlier_threshold=1.5)
    data = (np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))

    def solver(d):
        return estimate_fundamental_8pt(d[0], d[1])

    def residual(F, d):
        return sampson_distance(F, d[0], d[1])

    return run_ransac(data, solver, residual, config, refine_solver=solver)


# ---------------------------------------------------------------------------
# Robust weighting
# ---------------------------------------------------------------------------

def huber_weight(residual_norm, delta: float):
    """IRLS weight of the Huber loss: 1 inside ``delta``, ``delta / r`` outside."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    r = np.asarray(residual_norm, dtype=float)
    if np.any(r < 0):
        raise ValueError("residual norms must be nonnegative")
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(r <= delta, 1.0, delta / np.where(r > 0, r, 1.0))
    return float(w) if w.ndim == 0 else w
