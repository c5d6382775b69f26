"""ATE of a perturbed estimate plus the two standard plots, written to a temp dir."""

import sys
import tempfile
from pathlib import Path

import numpy as np

from landmarkloc.evaluation import Trajectory, compute_ate
from landmarkloc.geometry import Pose, SimilarityTransform, so3_exp
from landmarkloc.plotting import plot_error_over_time, plot_trajectories_topdown
from landmarkloc.simulation import circle_trajectory

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="landmarkloc_"))
out.mkdir(parents=True, exist_ok=True)

gt = circle_trajectory(10.0, 100, height=1.0)
rng = np.random.default_rng(3)
drift = np.cumsum(rng.normal(0, 0.01, (100, 3)), axis=0)
est = Trajectory(gt.timestamps, [Pose.from_center(so3_exp(rng.normal(0, 0.003, 3)) @ p.rotation, p.center + d)
                                 for p, d in zip(gt.poses, drift)])
# an unknown similarity, as a monocular estimate would carry
est = est.transformed(SimilarityTransform(0.4, so3_exp([0, 0, 1.0]), np.array([5.0, -2.0, 0.0])))

rep = compute_ate(gt, est)
print(f"ATE_pos {rep.ate_pos:.4f} m, ATE_rot {rep.ate_rot:.4f} deg, fitted scale {rep.alignment.scale:.4f}")
rep.save_json(out / "ate.json")
plot_error_over_time(rep, out / "ate_error.svg")
plot_trajectories_topdown(gt, est.transformed(rep.alignment), out / "topdown.svg")
print("wrote", ", ".join(p.name for p in sorted(out.iterdir())), "to", out)
