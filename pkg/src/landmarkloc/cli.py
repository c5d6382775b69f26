"""Command-line front end: simulate, build or import maps, localize, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import LandmarkLocError
from .evaluation import compute_ate, load_tum, parse_tum_pose, save_tum
from .features import load_frames
from .geometry import CameraIntrinsics, load_calibration, rotation_to_quat, save_calibration
from .mapping import (
    BundleConfig,
    ReconstructionConfig,
    apply_registration,
    compute_landmark_descriptors,
    import_colmap_text,
    incremental_reconstruct,
    load_map,
    load_matches,
    register_model,
    save_map,
    save_matches,
)
from .robust import RansacConfig
from .tracking import MotionModel, TrackerConfig, save_diagnostics, track_sequence

log = logging.getLogger("landmarkloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CONFIG_SIDECAR = "effective_config.json"


class UsageError(Exception):
    pass


def _dataclass_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def default_config() -> dict:
    tracker = _dataclass_defaults(TrackerConfig)
    tracker["motion_model"] = MotionModel(tracker["motion_model"]).value
    ransac = _dataclass_defaults(RansacConfig)
    ransac.update(sample_size=6, inlier_threshold=4.0)
    return {
        "seed": 0,
        "initial_pose": None,
        "scene": {"n_landmarks": 500, "extent": [[-10.0, -10.0, -10.0], [10.0, 10.0, 10.0]], "descriptor_dim": 32,
                  "descriptor_noise": 0.0, "min_descriptor_distance": 0.5},
        "trajectory": {"shape": "circle", "n_poses": 200, "radius": 30.0, "height": 0.0, "dt": 0.1,
                       "start": [-20.0, -30.0, 0.0], "end": [20.0, -30.0, 0.0]},
        "observation": {"pixel_noise": 0.0, "outlier_rate": 0.0, "dropout_rate": 0.0},
        "intrinsics": {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480, "skew": 0.0},
        "simulate": {"matches_max_gap": 3},
        "tracker": tracker,
        "ransac": ransac,
        "reconstruction": {"ba_interval": 5, "max_triangulation_error_px": 4.0, "prune_factor": 3.0,
                           "prune_floor_px": 1.0},
        "bundle": _dataclass_defaults(BundleConfig),
        "evaluation": {"with_scale": True, "literal_position_error": False, "max_dt": 0.02},
        "paths": {k: None for k in ("map", "frames", "matches", "calibration", "colmap", "pairs", "gt", "est", "out")},
    }


def merge_config(base: dict, override: dict, where: str = "") -> dict:
    """Recursively overlay ``override`` on ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise UsageError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise UsageError(f"config key {where + key!r} must be an object")
            out[key] = merge_config(base[key], val, where + key + ".")
        else:
            out[key] = val
    return out


def _setup_logging() -> None:
    level = os.environ.get("LANDMARKLOC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    if level not in levels:
        log.warning("LANDMARKLOC_LOG=%r not recognised; using info", level)


class _Parser(argparse.ArgumentParser):
    """Usage errors print the (sub)command help and exit with code 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, *flags: str) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--out", help="output directory")
    if "seed" in flags:
        p.add_argument("--seed", type=int, help="random seed")
    if "map" in flags:
        p.add_argument("--map", help="map file (landmark-map/1)")
    if "frames" in flags:
        p.add_argument("--frames", help="frame file (frames/1)")


def build_parser() -> _Parser:
    parser = _Parser(prog="landmarkloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="emit a synthetic map, frames and ground-truth trajectory")
    _common(p, "seed")
    p.add_argument("--n-landmarks", type=int)
    p.add_argument("--n-poses", type=int)
    p.add_argument("--trajectory", choices=["circle", "line"])
    p.add_argument("--pixel-noise", type=float)
    p.add_argument("--outlier-rate", type=float)
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--descriptor-noise", type=float)

    pm = sub.add_parser("map", help="build, import or register maps")
    msub = pm.add_subparsers(dest="map_command", metavar="MAP_COMMAND", parser_class=_Parser)
    b = msub.add_parser("build", help="incremental reconstruction from frames and pairwise matches")
    _common(b, "seed", "frames")
    b.add_argument("--matches", help="match file (matches/1) including the seed pair")
    b.add_argument("--calibration", help="camera calibration file")
    c = msub.add_parser("import-colmap", help="import a COLMAP text model")
    _common(c, "frames")
    c.add_argument("--colmap", help="directory with cameras.txt, images.txt, points3D.txt")
    r = msub.add_parser("register", help="fit the model-to-world similarity from point pairs")
    _common(r, "map")
    r.add_argument("--pairs", help="text file: 'mx my mz wx wy wz' per line")
    r.add_argument("--apply", action="store_true", help="also move the map into world coordinates")

    p = sub.add_parser("localize", help="track a frame sequence against a map")
    _common(p, "map", "frames")
    p.add_argument("--initial-pose", help='"tx ty tz qx qy qz qw" (camera-to-world)')
    p.add_argument("--motion-model", choices=[m.value for m in MotionModel])

    p = sub.add_parser("evaluate", help="absolute trajectory error of an estimate")
    _common(p)
    p.add_argument("--gt", help="ground-truth TUM trajectory")
    p.add_argument("--est", help="estimated TUM trajectory")
    p.add_argument("--no-scale", action="store_true", help="rigid instead of similarity alignment")
    p.add_argument("--literal-position-error", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

_PATH_FLAGS = ("map", "frames", "matches", "calibration", "colmap", "pairs", "gt", "est", "out")


def resolve_config(args) -> dict:
    cfg = default_config()
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise LandmarkLocError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise LandmarkLocError(f"{args.config}:{e.lineno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = merge_config(cfg, doc)
    a = vars(args)
    if a.get("seed") is not None:
        cfg["seed"] = a["seed"]
    for k in _PATH_FLAGS:
        if a.get(k) is not None:
            cfg["paths"][k] = a[k]
    flag_map = {
        "n_landmarks": ("scene", "n_landmarks"), "descriptor_noise": ("scene", "descriptor_noise"),
        "n_poses": ("trajectory", "n_poses"), "trajectory": ("trajectory", "shape"),
        "pixel_noise": ("observation", "pixel_noise"), "outlier_rate": ("observation", "outlier_rate"),
        "dropout_rate": ("observation", "dropout_rate"), "motion_model": ("tracker", "motion_model"),
    }
    for flag, (sec, key) in flag_map.items():
        if a.get(flag) is not None:
            cfg[sec][key] = a[flag]
    if a.get("initial_pose") is not None:
        cfg["initial_pose"] = a["initial_pose"]
    if a.get("no_scale"):
        cfg["evaluation"]["with_scale"] = False
    if a.get("literal_position_error"):
        cfg["evaluation"]["literal_position_error"] = True
    for k, v in cfg["paths"].items():
        if v is not None:
            cfg["paths"][k] = str(Path(v).resolve())
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg["paths"].get(k) is None]
    if missing:
        raise UsageError("missing required " + ", ".join(f"--{k.replace('_', '-')}" for k in missing))


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, command: str, out: Path) -> None:
    log.info("command %s, seed %d", command, cfg["seed"])
    log.info("effective config: %s", json.dumps(cfg, sort_keys=True))
    (out / CONFIG_SIDECAR).write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n")


def _tracker_config(cfg: dict) -> TrackerConfig:
    t = dict(cfg["tracker"])
    if isinstance(t.get("pose_prior_sigma"), list):
        t["pose_prior_sigma"] = tuple(t["pose_prior_sigma"])
    return TrackerConfig(**t)


def _intrinsics(cfg: dict) -> CameraIntrinsics:
    return CameraIntrinsics(**cfg["intrinsics"])


def parse_initial_pose(text: str):
    fields = text.replace(",", " ").split()
    if len(fields) != 7:
        raise UsageError(f"--initial-pose needs 7 numbers 'tx ty tz qx qy qz qw', got {len(fields)}")
    try:
        vals = [float(v) for v in fields]
    except ValueError:
        raise UsageError(f"--initial-pose is not numeric: {text!r}") from None
    if np.linalg.norm(vals[3:]) < 1e-12:
        raise UsageError("--initial-pose quaternion has zero norm")
    return parse_tum_pose(vals)


def format_pose_tum(pose) -> str:
    qw, qx, qy, qz = rotation_to_quat(pose.rotation.T)
    return " ".join(f"{v:.17g}" for v in (*pose.center, qx, qy, qz, qw))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, args=None) -> None:
    from . import simulation as sim

    _require(cfg, "out")
    out = _out_dir(cfg)
    _echo_config(cfg, "simulate", out)
    seed = int(cfg["seed"])
    sc = cfg["scene"]
    scene = sim.generate_scene(sim.SceneConfig(
        n_landmarks=sc["n_landmarks"], extent=tuple(tuple(v) for v in sc["extent"]),
        descriptor_dim=sc["descriptor_dim"], descriptor_noise=sc["descriptor_noise"],
        min_descriptor_distance=sc["min_descriptor_distance"], rng_seed=seed))
    tc = cfg["trajectory"]
    if tc["shape"] == "circle":
        traj = sim.circle_trajectory(tc["radius"], tc["n_poses"], height=tc["height"], dt=tc["dt"])
    elif tc["shape"] == "line":
        traj = sim.line_trajectory(tc["start"], tc["end"], tc["n_poses"], dt=tc["dt"])
    else:
        raise UsageError(f"unknown trajectory shape {tc['shape']!r}")
    K = _intrinsics(cfg)
    oc = cfg["observation"]
    obs = sim.ObservationConfig(pixel_noise=oc["pixel_noise"], outlier_rate=oc["outlier_rate"],
                                dropout_rate=oc["dropout_rate"], intrinsics=K, rng_seed=seed)
    frames, labels = sim.render_sequence(scene, traj, obs)
    sim.write_simulation(out, scene, traj, frames, K, labels)
    gap = max(1, min(int(cfg["simulate"]["matches_max_gap"]), len(frames) - 1))
    matches = sim.matches_from_labels(frames, labels, max_gap=gap)
    rel = traj.poses[gap].compose(traj.poses[0].inverse())
    save_matches(out / "matches.json", matches, seed=(frames[0].id, frames[gap].id, rel))
    save_calibration(out / "calibration.json", K)
    (out / "initial_pose.txt").write_text(format_pose_tum(traj.poses[0]) + "\n")
    log.info("wrote %d landmarks, %d frames to %s", len(scene), len(frames), out)


def cmd_map_build(cfg: dict, args=None) -> None:
    _require(cfg, "frames", "matches", "out")
    out = _out_dir(cfg)
    _echo_config(cfg, "map build", out)
    frames = load_frames(cfg["paths"]["frames"])
    matches, seed = load_matches(cfg["paths"]["matches"])
    if seed is None:
        raise LandmarkLocError("match file has no seed pair; reconstruction needs a known seed relative pose")
    K = load_calibration(cfg["paths"]["calibration"])[0] if cfg["paths"]["calibration"] else _intrinsics(cfg)
    rc = cfg["reconstruction"]
    ransac = RansacConfig(**{**cfg["ransac"], "rng_seed": int(cfg["seed"])})
    config = ReconstructionConfig(
        ba_interval=rc["ba_interval"], pnp_ransac=ransac,
        max_triangulation_error_px=rc["max_triangulation_error_px"], bundle=BundleConfig(**cfg["bundle"]),
        prune_factor=rc["prune_factor"], prune_floor_px=rc["prune_floor_px"])
    model = incremental_reconstruct(frames, matches, seed, K, config)
    save_map(model, out / "map.json")
    log.info("map: %d landmarks, %d cameras, mean reprojection error %.4g px",
             len(model.landmarks), len(model.camera_poses), model.mean_reprojection_error())


def cmd_map_import(cfg: dict, args=None) -> None:
    _require(cfg, "colmap", "out")
    out = _out_dir(cfg)
    _echo_config(cfg, "map import-colmap", out)
    model = import_colmap_text(cfg["paths"]["colmap"])
    if cfg["paths"]["frames"]:
        model = compute_landmark_descriptors(model, load_frames(cfg["paths"]["frames"]))
    else:
        log.warning("no --frames given; landmarks carry no descriptors and cannot be localized against")
    save_map(model, out / "map.json")
    log.info("imported %d landmarks, %d cameras", len(model.landmarks), len(model.camera_poses))


def load_point_pairs(path) -> tuple[np.ndarray, np.ndarray]:
    from .errors import ParseError

    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 numbers, got {len(parts)}", path, lineno)
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
    arr = np.array(rows).reshape(-1, 6)
    return arr[:, :3], arr[:, 3:]


def cmd_map_register(cfg: dict, args=None) -> None:
    _require(cfg, "map", "pairs", "out")
    out = _out_dir(cfg)
    _echo_config(cfg, "map register", out)
    model = load_map(cfg["paths"]["map"])
    src, dst = load_point_pairs(cfg["paths"]["pairs"])
    model, rms = register_model(model, src, dst)
    T = model.registration
    (out / "registration.json").write_text(json.dumps(
        {"s": T.scale, "q": rotation_to_quat(T.rotation).tolist(), "t": T.translation.tolist(), "rms": rms},
        indent=2) + "\n")
    if getattr(args, "apply", False):
        model = apply_registration(model)
    save_map(model, out / "map.json")
    log.info("registration scale %.6g, rms %.4g", T.scale, rms)


def cmd_localize(cfg: dict, args=None) -> None:
    _require(cfg, "map", "frames", "out")
    if cfg["initial_pose"] is None:
        raise UsageError("missing required --initial-pose")
    initial = parse_initial_pose(cfg["initial_pose"])
    tcfg = _tracker_config(cfg)
    out = _out_dir(cfg)
    _echo_config(cfg, "localize", out)
    model = load_map(cfg["paths"]["map"])
    if model.registration is not None:
        model = apply_registration(model)
    frames = load_frames(cfg["paths"]["frames"])
    traj, diags = track_sequence(frames, model, initial, tcfg)
    save_tum(out / "trajectory.txt", traj)
    save_diagnostics(out / "diagnostics.csv", diags)
    n_ok = sum(d.status.value == "Tracked" for d in diags)
    log.info("tracked %d of %d frames", n_ok, len(diags))


def cmd_evaluate(cfg: dict, args=None) -> None:
    from .plotting import plot_error_over_time, plot_trajectories_topdown

    _require(cfg, "gt", "est", "out")
    out = _out_dir(cfg)
    _echo_config(cfg, "evaluate", out)
    gt, est = load_tum(cfg["paths"]["gt"]), load_tum(cfg["paths"]["est"])
    ec = cfg["evaluation"]
    report = compute_ate(gt, est, with_scale=ec["with_scale"], literal_position_error=ec["literal_position_error"],
                         max_dt=ec["max_dt"])
    report.save_json(out / "ate.json")
    plot_error_over_time(report, out / "ate_error.svg")
    plot_trajectories_topdown(gt, est.transformed(report.alignment), out / "trajectory_topdown.svg")
    print(f"ATE_pos {report.ate_pos:.6g} m  ATE_rot {report.ate_rot:.6g} deg  ({report.n_frames} frames)")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    if args.command == "map" and args.map_command is None:
        parser.error("map needs a subcommand: build, import-colmap or register")
    handlers = {
        ("simulate", None): cmd_simulate, ("map", "build"): cmd_map_build,
        ("map", "import-colmap"): cmd_map_import, ("map", "register"): cmd_map_register,
        ("localize", None): cmd_localize, ("evaluate", None): cmd_evaluate,
    }
    handler = handlers[(args.command, getattr(args, "map_command", None))]
    try:
        cfg = resolve_config(args)
        handler(cfg, args)
    except UsageError as e:
        sub = parser
        if args.command:
            sub = _find_subparser(parser, args)
        sub.print_help(sys.stderr)
        sys.stderr.write(f"\n{sub.prog}: error: {e}\n")
        return EXIT_USAGE
    except (LandmarkLocError, OSError, ValueError) as e:
        log.error("%s", e)
        return EXIT_DATA
    return EXIT_OK


def _find_subparser(parser, args):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub = action.choices.get(args.command, parser)
            if args.command == "map" and getattr(args, "map_command", None):
                return _find_subparser(sub, argparse.Namespace(command=args.map_command))
            return sub
    return parser


if __name__ == "__main__":
    sys.exit(main())
