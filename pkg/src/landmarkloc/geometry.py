"""Camera and transform algebra.

Poses follow the world-to-camera convention used by ``P = K [R | t]``:
a world point ``X`` lands in camera coordinates as ``R @ X + t``. The camera
center is therefore ``-R.T @ t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CollinearPoints,
    DegenerateDepth,
    NoConvergence,
    ParseError,
    TooFewPairs,
)

ORTHO_TOL = 1e-9


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# SO(3) helpers
# ---------------------------------------------------------------------------

def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula; ``w`` is an axis-angle 3-vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-8:
        # second-order Taylor keeps the result orthonormal to ~1e-24
        return np.eye(3) + W + 0.5 * W @ W
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * W @ W


def so3_log(R) -> np.ndarray:
    """Inverse of :func:`so3_exp`, valid on the whole of SO(3)."""
    R = np.asarray(R, dtype=float)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(vee)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta < 1e-8:
        return 0.5 * vee
    if math.pi - theta > 1e-4:
        return theta / (2.0 * math.sin(theta)) * vee
    # near pi: axis from the symmetric part, sign from the skew part
    B = 0.5 * (R + R.T) - c * np.eye(3)
    B /= 1.0 - c
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ vee < 0:
        axis = -axis
    return theta * axis


def so3_left_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    half = 0.5 * theta
    coef = (1.0 - half * math.cos(half) / math.sin(half)) / theta**2
    return np.eye(3) - 0.5 * W + coef * W @ W


def nearest_rotation(M) -> np.ndarray:
    """Orthogonal Procrustes: the rotation closest to ``M`` in Frobenius norm."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def quat_to_rotation(qw, qx, qy, qz) -> np.ndarray:
    q = np.array([qw, qx, qy, qz], dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"invalid quaternion {q.tolist()}")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quat(R) -> np.ndarray:
    """Returns ``(qw, qx, qy, qz)`` with ``qw >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        S = math.sqrt(tr + 1.0) * 2
        q = [0.25 * S, (R[2, 1] - R[1, 2]) / S, (R[0, 2] - R[2, 0]) / S, (R[1, 0] - R[0, 1]) / S]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        S = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / S, 0.25 * S, (R[0, 1] + R[1, 0]) / S, (R[0, 2] + R[2, 0]) / S]
    elif R[1, 1] > R[2, 2]:
        S = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / S, (R[0, 1] + R[1, 0]) / S, 0.25 * S, (R[1, 2] + R[2, 1]) / S]
    else:
        S = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / S, (R[0, 2] + R[2, 0]) / S, (R[1, 2] + R[2, 1]) / S, 0.25 * S]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def _check_rotation(R: np.ndarray, what: str) -> None:
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError(f"{what} must be a finite 3x3 matrix")
    if np.abs(R @ R.T - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise ValueError(f"{what} is not a proper rotation")


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world-to-camera transform, ``X_cam = R @ X_world + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        _check_rotation(R, "Pose.rotation")
        if not np.all(np.isfinite(t)):
            raise ValueError("Pose.translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_center(cls, rotation, center) -> Pose:
        """Build from a world-to-camera rotation and the camera center."""
        R = np.asarray(rotation, dtype=float)
        return cls(R, -R @ np.asarray(center, dtype=float))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first."""
        R = self.rotation @ other.rotation
        return Pose(_reorthonormalize(R), self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return self.compose(other)

    def transform(self, X) -> np.ndarray:
        """Map world point(s) of shape (3,) or (N, 3) into the camera frame."""
        X = np.asarray(X, dtype=float)
        return X @ self.rotation.T + self.translation

    def retract(self, delta) -> Pose:
        """Left retraction with a 6-vector ``(omega, v)``.

        ``R <- exp(omega) R`` and ``t <- exp(omega) t + v``, so ``v`` alone moves
        the camera center while ``omega`` alone rotates about it.
        """
        delta = np.asarray(delta, dtype=float)
        dR = so3_exp(delta[:3])
        return Pose(_reorthonormalize(dR @ self.rotation), dR @ self.translation + delta[3:6])

    def local(self, other: Pose) -> np.ndarray:
        """Inverse of :meth:`retract`: ``self.retract(self.local(other)) == other``."""
        dR = other.rotation @ self.rotation.T
        w = so3_log(dR)
        return np.concatenate([w, other.translation - dR @ self.translation])

    def __repr__(self) -> str:
        return f"Pose(R={self.rotation.tolist()}, t={self.translation.tolist()})"


def _reorthonormalize(R: np.ndarray) -> np.ndarray:
    # keeps long products of rotations inside the 1e-9 invariant
    if np.abs(R @ R.T - np.eye(3)).max() < 1e-13:
        return R
    return nearest_rotation(R)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``X -> scale * R @ X + t``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("SimilarityTransform.scale must be positive")
        R = _frozen(self.rotation, (3, 3))
        _check_rotation(R, "SimilarityTransform.rotation")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls()

    def inverse(self) -> SimilarityTransform:
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -Rt @ self.translation / self.scale)

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """``self ∘ other``."""
        return SimilarityTransform(
            self.scale * other.scale,
            _reorthonormalize(self.rotation @ other.rotation),
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        fx, fy, s, cx, cy = self.fx, self.fy, self.skew, self.cx, self.cy
        return np.array([
            [1 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
            [0.0, 1 / fy, -cy / fy],
            [0.0, 0.0, 1.0],
        ])

    def to_pixels(self, normalized) -> np.ndarray:
        xy = np.asarray(normalized, dtype=float)
        u = self.fx * xy[..., 0] + self.skew * xy[..., 1] + self.cx
        v = self.fy * xy[..., 1] + self.cy
        return np.stack([u, v], axis=-1)

    def to_normalized(self, pixels) -> np.ndarray:
        uv = np.asarray(pixels, dtype=float)
        y = (uv[..., 1] - self.cy) / self.fy
        x = (uv[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y], axis=-1)

    def in_bounds(self, pixels) -> np.ndarray:
        uv = np.asarray(pixels, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "skew": self.skew, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class DistortionCoeffs:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.as_tuple()):
            raise ValueError("distortion coefficients must be finite")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.p1, self.p2)

    @property
    def is_zero(self) -> bool:
        return not any(self.as_tuple())

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "p1": self.p1, "p2": self.p2}


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def compose_projection(K: CameraIntrinsics | np.ndarray, pose: Pose) -> np.ndarray:
    """Return the 3x4 projection matrix ``K [R | t]``.

    ``K`` may also be a bare 3x3 matrix, e.g. normalized-camera identity.
    """
    Km = K.K if isinstance(K, CameraIntrinsics) else np.asarray(K, dtype=float).reshape(3, 3)
    return Km @ np.column_stack([pose.rotation, pose.translation])


def project_points(P, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection of (N, 3) points; returns pixels (N, 2) and depths (N,).

    Points with zero depth come back as non-finite pixels; use
    :func:`project_point` when that should raise.
    """
    P = np.asarray(P, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = X @ P[:, :3].T + P[:, 3]
    depth = h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        pix = h[:, :2] / depth[:, None]
    return pix, depth


def project_point(P, X) -> tuple[np.ndarray, float]:
    """Project one world point. Depth is the homogeneous scale ``lambda``.

    Negative depth is returned as is (the caller decides whether to cull);
    only a point on the principal plane raises.
    """
    X = np.asarray(X, dtype=float).reshape(3)
    if not np.all(np.isfinite(X)):
        raise ValueError("point must be finite")
    h = np.asarray(P, dtype=float) @ np.append(X, 1.0)
    if abs(h[2]) < 1e-12:
        raise DegenerateDepth(f"point {X.tolist()} lies on the principal plane")
    return h[:2] / h[2], float(h[2])


# ---------------------------------------------------------------------------
# Lens distortion
# ---------------------------------------------------------------------------

def distort_normalized(pt, d: DistortionCoeffs) -> np.ndarray:
    """Apply radial + tangential distortion to normalized coordinates (..., 2)."""
    pt = np.asarray(pt, dtype=float)
    x, y = pt[..., 0], pt[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + d.k1 * r2 + d.k2 * r2**2 + d.k3 * r2**3
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _distortion_jacobian(x, y, d: DistortionCoeffs):
    r2 = x * x + y * y
    radial = 1.0 + d.k1 * r2 + d.k2 * r2**2 + d.k3 * r2**3
    dradial = d.k1 + 2.0 * d.k2 * r2 + 3.0 * d.k3 * r2**2  # d radial / d r2
    j11 = radial + 2 * x * x * dradial + 2 * d.p1 * y + 6 * d.p2 * x
    j12 = 2 * x * y * dradial + 2 * d.p1 * x + 2 * d.p2 * y
    j21 = 2 * x * y * dradial + 2 * d.p1 * x + 2 * d.p2 * y
    j22 = radial + 2 * y * y * dradial + 6 * d.p1 * y + 2 * d.p2 * x
    return j11, j12, j21, j22


def undistort_normalized(pt, d: DistortionCoeffs, max_iter: int = 20, tol: float = 1e-10) -> np.ndarray:
    """Invert :func:`distort_normalized` by Newton iteration."""
    target = np.asarray(pt, dtype=float)
    if d.is_zero:
        return target.copy()
    cur = target.copy()
    for _ in range(max_iter):
        x, y = cur[..., 0], cur[..., 1]
        res = distort_normalized(cur, d) - target
        j11, j12, j21, j22 = _distortion_jacobian(x, y, d)
        det = j11 * j22 - j12 * j21
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = (j22 * res[..., 0] - j12 * res[..., 1]) / det
            dy = (-j21 * res[..., 0] + j11 * res[..., 1]) / det
        step = np.stack([dx, dy], axis=-1)
        cur = cur - step
        size = np.max(np.abs(step)) if step.size else 0.0
        if not np.isfinite(size):
            break
        if size < tol:
            return cur
    raise NoConvergence("undistortion did not converge; distortion too strong for this point")


def undistort_pixel(pixel, K: CameraIntrinsics, d: DistortionCoeffs) -> np.ndarray:
    """Map distorted pixel(s) to where an ideal pinhole camera would see them."""
    pixel = np.asarray(pixel, dtype=float)
    if d.is_zero:
        return pixel.copy()
    return K.to_pixels(undistort_normalized(K.to_normalized(pixel), d))


def distort_pixel(pixel, K: CameraIntrinsics, d: DistortionCoeffs) -> np.ndarray:
    """Forward model in pixel space (ideal pixel -> observed pixel)."""
    return K.to_pixels(distort_normalized(K.to_normalized(pixel), d))


# ---------------------------------------------------------------------------
# Similarity transforms and rotation metrics
# ---------------------------------------------------------------------------

def apply_similarity(T: SimilarityTransform, obj):
    """Apply ``T`` to a point, an (N, 3) array of points, or a :class:`Pose`.

    A pose is moved rigidly with its camera center, its orientation composed
    with ``R^T`` so the camera keeps looking at the same (transformed) scene.
    """
    if isinstance(obj, Pose):
        if T.scale == 1.0 and not np.any(T.translation) and np.array_equal(T.rotation, np.eye(3)):
            return obj
        c = T.scale * T.rotation @ obj.center + T.translation
        R = _reorthonormalize(obj.rotation @ T.rotation.T)
        return Pose.from_center(R, c)
    X = np.asarray(obj, dtype=float)
    return T.scale * X @ T.rotation.T + T.translation


def rotation_angle_between(Ra, Rb) -> float:
    """Geodesic distance in degrees between two rotations, in [0, 180]."""
    R = np.asarray(Ra, dtype=float) @ np.asarray(Rb, dtype=float).T
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(vee)
    c = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    return math.degrees(math.atan2(s, c))


def fit_similarity(src, dst, with_scale: bool = True) -> tuple[SimilarityTransform, float]:
    """Closed-form least-squares alignment ``dst ~ s R src + t`` (Umeyama 1991).

    Returns the transform and the RMS residual of the fit.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must both be (N, 3)")
    n = len(src)
    if n < 3:
        raise TooFewPairs(f"need at least 3 point pairs, got {n}")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    sv_src = np.linalg.svd(xs, compute_uv=False)
    if sv_src[0] == 0 or sv_src[1] <= 1e-9 * sv_src[0]:
        raise CollinearPoints("source points are collinear or coincident")
    Sigma = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(Sigma)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    var_s = (xs**2).sum() / n
    s = float(np.trace(np.diag(D) @ S) / var_s) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    T = SimilarityTransform(s, nearest_rotation(R), t)
    res = dst - apply_similarity(T, src)
    rms = float(np.sqrt((res**2).sum(1).mean()))
    return T, rms


# ---------------------------------------------------------------------------
# Calibration file
# ---------------------------------------------------------------------------

_CALIB_KEYS = ("fx", "fy", "skew", "cx", "cy", "width", "height", "k1", "k2", "k3", "p1", "p2")


def load_calibration(path) -> tuple[CameraIntrinsics, DistortionCoeffs]:
    """Read a calibration document (JSON object or ``key: value`` lines)."""
    path = Path(path)
    text = path.read_text()
    try:
        values = json.loads(text)
        if not isinstance(values, dict):
            raise ParseError("calibration JSON must be an object", path)
    except json.JSONDecodeError:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = ":" if ":" in line else ("=" if "=" in line else None)
            if sep is None:
                parts = line.split()
                if len(parts) != 2:
                    raise ParseError(f"expected 'key: value', got {raw!r}", path, lineno)
                key, val = parts
            else:
                key, val = (p.strip() for p in line.split(sep, 1))
            try:
                values[key] = float(val)
            except ValueError:
                raise ParseError(f"non-numeric value for {key!r}", path, lineno) from None
    unknown = set(values) - set(_CALIB_KEYS)
    if unknown:
        raise ParseError(f"unknown calibration keys {sorted(unknown)}", path)
    missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(values)
    if missing:
        raise ParseError(f"missing calibration keys {sorted(missing)}", path)
    K = CameraIntrinsics(
        fx=float(values["fx"]), fy=float(values["fy"]), cx=float(values["cx"]), cy=float(values["cy"]),
        width=int(values["width"]), height=int(values["height"]), skew=float(values.get("skew", 0.0)),
    )
    d = DistortionCoeffs(**{k: float(values.get(k, 0.0)) for k in ("k1", "k2", "k3", "p1", "p2")})
    return K, d


def save_calibration(path, K: CameraIntrinsics, d: DistortionCoeffs | None = None) -> None:
    doc = K.to_dict()
    doc.update((d or DistortionCoeffs()).to_dict())
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
