"""Static versus constant-speed prediction on a constant-angular-velocity path."""

from landmarkloc.evaluation import compute_ate
from landmarkloc.simulation import ObservationConfig, SceneConfig, circle_trajectory, generate_scene, render_sequence
from landmarkloc.tracking import MotionModel, TrackerConfig, track_sequence

traj = circle_trajectory(30.0, 200)
print("seed  static_m   const_m")
for seed in range(5):
    scene = generate_scene(SceneConfig(n_landmarks=500, descriptor_noise=0.05, rng_seed=seed))
    obs = ObservationConfig(pixel_noise=1.0, dropout_rate=0.3, rng_seed=seed)
    frames, _ = render_sequence(scene, traj, obs)
    row = []
    for mm in (MotionModel.STATIC, MotionModel.CONSTANT_SPEED):
        est, _ = track_sequence(frames, scene.to_map(obs.intrinsics), traj.poses[0], TrackerConfig(motion_model=mm))
        row.append(compute_ate(traj, est).ate_pos)
    print(f"{seed:4d}  {row[0]:.5f}   {row[1]:.5f}")
