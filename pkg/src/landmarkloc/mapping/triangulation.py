"""Linear (DLT) triangulation."""

import numpy as np

from ..errors import CheiralityViolation, DegenerateBaseline


def camera_center(P) -> np.ndarray:
    """Right null vector of a 3x4 camera matrix, dehomogenized."""
    _, _, Vt = np.linalg.svd(np.asarray(P, dtype=float))
    C = Vt[-1]
    if abs(C[3]) < 1e-15:
        return np.full(3, np.inf)
    return C[:3] / C[3]


def point_depth(P, X) -> float:
    """Depth of ``X`` in camera ``P``."""
    P = np.asarray(P, dtype=float)
    w = P[2] @ np.append(X, 1.0)
    M = P[:, :3]
    return float(np.sign(np.linalg.det(M)) * w / np.linalg.norm(M[2]))


def triangulate_multiview(Ps, xs) -> np.ndarray:
    """Least-squares DLT over any number of views (no validity checks)."""
    rows = []
    for P, (u, v) in zip(Ps, xs):
        P = np.asarray(P, dtype=float)
        for r in (u * P[2] - P[0], v * P[2] - P[1]):
            rows.append(r / np.linalg.norm(r))
    _, _, Vt = np.linalg.svd(np.array(rows))
    Xh = Vt[-1]
    return Xh[:3] / Xh[3]


def triangulate_dlt(P1, P2, x1, x2) -> np.ndarray:
    """Triangulate one point seen at pixel ``x1`` in ``P1`` and ``x2`` in ``P2``.

    Raises :class:`DegenerateBaseline` for coincident camera centers and
    :class:`CheiralityViolation` when the result is behind either camera.
    """
    c1, c2 = camera_center(P1), camera_center(P2)
    if np.all(np.isfinite(c1)) and np.all(np.isfinite(c2)) and np.linalg.norm(c1 - c2) < 1e-9:
        raise DegenerateBaseline("camera centers coincide")
    X = triangulate_multiview([P1, P2], [x1, x2])
    if not np.all(np.isfinite(X)):
        raise CheiralityViolation("point triangulated at infinity")
    if point_depth(P1, X) <= 0 or point_depth(P2, X) <= 0:
        raise CheiralityViolation("triangulated point lies behind a camera")
    return X
