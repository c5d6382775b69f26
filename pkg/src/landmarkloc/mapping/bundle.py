"""Bundle adjustment: joint robust refinement of camera poses and landmarks.

The 7-DoF gauge is fixed by freezing the first gauge camera entirely and
keeping the second camera's center on a sphere of constant radius about the
first (so the seed baseline keeps its length). Normal equations are
assembled densely; this targets desk-scale problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import _reproj
from .._lm import damped_gauss_newton
from ..errors import SingularNormalEquations
from ..geometry import Pose, so3_exp
from ..robust import huber_weight
from .model import AdjustmentReport, SfmModel


@dataclass(frozen=True)
class BundleConfig:
    huber_delta_px: float = 2.0
    max_iterations: int = 100
    rel_tolerance: float = 1e-8
    cost_floor: float = 1e-20


def _tangent_basis(u: np.ndarray) -> np.ndarray:
    a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(u, a)
    b1 /= np.linalg.norm(b1)
    return np.column_stack([b1, np.cross(u, b1)])


class _Problem:
    def __init__(self, model: SfmModel, config: BundleConfig):
        self.K = model.intrinsics
        self.delta = config.huber_delta_px
        frames = sorted(model.camera_poses)
        gauge = model.gauge if model.gauge and all(g in model.camera_poses for g in model.gauge) else None
        if gauge is None:
            gauge = tuple(frames[:2]) if len(frames) >= 2 else (frames[0], None)
        self.fixed, self.scale_frame = gauge

        lids, cams, pix = [], [], []
        for lid in sorted(model.observations):
            for o in model.observations[lid]:
                if o.frame_id in model.camera_poses:
                    lids.append(lid)
                    cams.append(o.frame_id)
                    pix.append(o.pixel)
        self.obs_lid = np.array(lids, dtype=int)
        self.obs_cam = np.array(cams, dtype=int)
        self.obs_pix = np.array(pix, dtype=float).reshape(-1, 2)
        self.landmark_ids = np.array(sorted(set(lids)), dtype=int)
        lrow = {lid: i for i, lid in enumerate(self.landmark_ids)}
        self.obs_lrow = np.array([lrow[i] for i in lids], dtype=int)
        counts = np.bincount(self.obs_lrow, minlength=len(self.landmark_ids))

        # parameter layout
        self.names: list[str] = []
        self.cam_slice: dict[int, tuple[int, int]] = {}
        col = 0
        self.scale_center_ok = False
        if self.scale_frame is not None:
            ca = model.camera_poses[self.fixed].center
            cb = model.camera_poses[self.scale_frame].center
            self.baseline = float(np.linalg.norm(cb - ca))
            self.scale_center_ok = self.baseline > 1e-12
        for f in frames:
            if f == self.fixed:
                continue
            n = 5 if (f == self.scale_frame and self.scale_center_ok) else 6
            self.cam_slice[f] = (col, n)
            self.names += [f"camera {f}"] * n
            col += n
        self.pt_col = np.full(len(self.landmark_ids), -1, dtype=int)
        for i, lid in enumerate(self.landmark_ids):
            if counts[i] >= 2:
                self.pt_col[i] = col
                self.names += [f"landmark {lid}"] * 3
                col += 3
        self.n_params = col
        self.cam_groups = {f: np.flatnonzero(self.obs_cam == f) for f in frames}

    def initial_state(self, model: SfmModel):
        X = np.array([model.landmarks[i].position for i in self.landmark_ids]).reshape(-1, 3)
        return dict(model.camera_poses), X

    def residual_norms(self, state) -> np.ndarray:
        poses, X = state
        out = np.empty(len(self.obs_lid))
        for f, idx in self.cam_groups.items():
            if len(idx) == 0:
                continue
            pose = poses[f]
            Xc = X[self.obs_lrow[idx]] @ pose.rotation.T + pose.translation
            u = self.K.fx * Xc[:, 0] / Xc[:, 2] + self.K.skew * Xc[:, 1] / Xc[:, 2] + self.K.cx
            v = self.K.fy * Xc[:, 1] / Xc[:, 2] + self.K.cy
            out[idx] = np.hypot(u - self.obs_pix[idx, 0], v - self.obs_pix[idx, 1])
        return out

    def cost(self, state) -> float:
        return float(_reproj.huber_cost(self.residual_norms(state), self.delta).sum())

    def jacobian(self, state):
        """Unweighted residuals (m, 2) and their sparse Jacobian (2m, n_params)."""
        poses, X = state
        m = len(self.obs_lid)
        r = np.zeros((m, 2))
        rows, cols, vals = [], [], []
        for f, idx in self.cam_groups.items():
            if len(idx) == 0:
                continue
            pose = poses[f]
            pix, Jp, Jl, _ = _reproj.project_with_jacobians(pose.rotation, pose.translation, X[self.obs_lrow[idx]], self.K)
            r[idx] = pix - self.obs_pix[idx]
            if f in self.cam_slice:
                c0, n = self.cam_slice[f]
                if n == 5:
                    B = _tangent_basis(self._baseline_dir(poses))
                    Jc = np.concatenate([Jp[:, :, :3], Jp[:, :, 3:] @ (-pose.rotation @ B)], axis=2)
                else:
                    Jc = Jp
                rr = (2 * idx[:, None, None] + np.arange(2)[None, :, None]) * np.ones((1, 1, n), dtype=int)
                cc = np.broadcast_to(c0 + np.arange(n), rr.shape)
                rows.append(rr.ravel()); cols.append(cc.ravel()); vals.append(Jc.ravel())
            pc = self.pt_col[self.obs_lrow[idx]]
            free = pc >= 0
            if free.any():
                fi = idx[free]
                rr = (2 * fi[:, None, None] + np.arange(2)[None, :, None]) * np.ones((1, 1, 3), dtype=int)
                cc = pc[free][:, None, None] + np.arange(3)[None, None, :] + np.zeros((1, 2, 1), dtype=int)
                rows.append(rr.ravel()); cols.append(cc.ravel()); vals.append(Jl[free].ravel())
        J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * m, self.n_params))
        return r, J

    def linearize(self, state):
        r, J = self.jacobian(state)
        w = huber_weight(np.linalg.norm(r, axis=1), self.delta)
        sw = np.repeat(np.sqrt(w), 2)
        Jw = sp.diags(sw) @ J
        H = (Jw.T @ Jw).toarray()
        g = Jw.T @ (sw * r.ravel())
        zero = np.flatnonzero(np.diag(H) <= 0)
        if len(zero):
            raise SingularNormalEquations(f"no information on {self.names[zero[0]]}", self.names[zero[0]])
        return H, g

    def _baseline_dir(self, poses) -> np.ndarray:
        d = poses[self.scale_frame].center - poses[self.fixed].center
        return d / np.linalg.norm(d)

    def retract(self, state, dx):
        poses, X = state
        new_poses = dict(poses)
        for f, (c0, n) in self.cam_slice.items():
            d = dx[c0:c0 + n]
            pose = poses[f]
            if n == 6:
                new_poses[f] = pose.retract(d)
            else:
                ca = poses[self.fixed].center
                B = _tangent_basis(self._baseline_dir(poses))
                R = so3_exp(d[:3]) @ pose.rotation
                c = pose.center - ca + B @ d[3:]
                c = ca + self.baseline * c / np.linalg.norm(c)
                new_poses[f] = Pose.from_center(R, c)
        X_new = X.copy()
        free = self.pt_col >= 0
        if free.any():
            idx = self.pt_col[free][:, None] + np.arange(3)
            X_new[free] += dx[idx]
        return new_poses, X_new


def bundle_adjust(model: SfmModel, config: BundleConfig | None = None) -> SfmModel:
    """Minimise the Huber-robustified sum of squared reprojection errors.

    Returns a new model; its ``last_adjustment`` holds the cost history and
    the mean reprojection error (plain, unweighted pixel distance).
    """
    config = config or BundleConfig()
    prob = _Problem(model, config)
    state = prob.initial_state(model)
    if prob.n_params == 0 or len(prob.obs_lid) == 0:
        info_state, iters, hist, conv = state, 0, [prob.cost(state)], True
    else:
        info = damped_gauss_newton(state, prob.cost, prob.linearize, prob.retract,
                                   max_iterations=config.max_iterations, rel_tol=config.rel_tolerance,
                                   cost_floor=config.cost_floor)
        info_state, iters, hist, conv = info.state, info.iterations, info.cost_history, info.converged
    assert all(b <= a for a, b in zip(hist, hist[1:])), "accepted step increased the cost"

    poses, X = info_state
    out = model.copy()
    out.camera_poses = poses
    for lid, x in zip(prob.landmark_ids, X):
        out.landmarks[int(lid)].position = x.copy()
    norms = prob.residual_norms(info_state)
    out.last_adjustment = AdjustmentReport(
        iterations=iters,
        initial_cost=hist[0],
        final_cost=hist[-1],
        cost_history=tuple(hist),
        mean_reprojection_error=float(norms.mean()) if len(norms) else 0.0,
        converged=conv,
    )
    return out


def prune_landmarks(model: SfmModel, factor: float = 3.0, floor_px: float = 1.0) -> tuple[SfmModel, list[int]]:
    """Drop landmarks whose mean reprojection error exceeds ``factor`` times
    the robust residual scale (1.4826 * median, floored at ``floor_px``), and
    landmarks with fewer than two observations."""
    errs = model.reprojection_errors()
    all_res = np.concatenate([e for e in errs.values() if len(e)]) if errs else np.zeros(0)
    scale = max(1.4826 * float(np.median(all_res)) if len(all_res) else 0.0, floor_px)
    out = model.copy()
    dropped = []
    for lid in sorted(out.landmarks):
        e = errs.get(lid, np.zeros(0))
        if len(e) < 2 or e.mean() > factor * scale:
            dropped.append(lid)
            del out.landmarks[lid]
            out.observations.pop(lid, None)
    return out, dropped
