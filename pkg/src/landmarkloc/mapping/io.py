"""Map file (``landmark-map/1``) and COLMAP text-model import."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .._jsondoc import dumps_rows, element_lines, line_of
from ..errors import GeometryError, ParseError, UnsupportedCameraModel
from ..geometry import (
    CameraIntrinsics,
    DistortionCoeffs,
    Pose,
    SimilarityTransform,
    quat_to_rotation,
    rotation_to_quat,
)
from .model import Landmark, Observation, SfmModel

MAP_FORMAT = "landmark-map/1"


def _pose_doc(pose: Pose) -> dict:
    qw, qx, qy, qz = rotation_to_quat(pose.rotation)
    tx, ty, tz = pose.translation
    # the full matrix rides along so save/load is bit-exact
    return {"qw": qw, "qx": qx, "qy": qy, "qz": qz, "tx": tx, "ty": ty, "tz": tz,
            "rotation": pose.rotation.ravel().tolist()}


def _rotation_from(doc: dict) -> np.ndarray:
    if "rotation" in doc:
        return np.array(doc["rotation"], dtype=float).reshape(3, 3)
    return quat_to_rotation(doc["qw"], doc["qx"], doc["qy"], doc["qz"])


def save_map(model: SfmModel, path) -> None:
    reg = None
    if model.registration is not None:
        T = model.registration
        reg = {"s": T.scale, "q": rotation_to_quat(T.rotation).tolist(), "t": T.translation.tolist(),
               "rotation": T.rotation.ravel().tolist()}
    doc = {
        "format": MAP_FORMAT,
        "descriptor_dim": model.descriptor_dim,
        "intrinsics": model.intrinsics.to_dict(),
        "distortion": None if model.distortion is None else model.distortion.to_dict(),
        "registration": reg,
        "landmarks": [
            {"id": int(lm.id), "xyz": lm.position.tolist(),
             "descriptor": None if lm.descriptor is None else lm.descriptor.tolist(),
             "obs_count": int(lm.observation_count)}
            for lm in (model.landmarks[i] for i in sorted(model.landmarks))
        ],
        "poses": [dict(frame_id=int(fid), **_pose_doc(model.camera_poses[fid])) for fid in sorted(model.camera_poses)],
        "observations": [
            {"landmark_id": int(lid), "frame_id": int(o.frame_id), "keypoint": int(o.keypoint_index),
             "u": float(o.pixel[0]), "v": float(o.pixel[1])}
            for lid in sorted(model.observations) for o in model.observations[lid]
        ],
    }
    if model.gauge is not None:
        doc["gauge"] = [int(g) for g in model.gauge]
    Path(path).write_text(dumps_rows(doc, ("landmarks", "poses", "observations")))


def load_map(path) -> SfmModel:
    """Read a map file; errors name the line of the offending record."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != MAP_FORMAT:
        raise ParseError(f"not a {MAP_FORMAT} document", path, 1)
    try:
        K = CameraIntrinsics(**{k: doc["intrinsics"][k] for k in ("fx", "fy", "cx", "cy", "width", "height", "skew")})
        dist = DistortionCoeffs(**doc["distortion"]) if doc.get("distortion") else None
        reg = None
        if doc.get("registration"):
            r = doc["registration"]
            R = np.array(r["rotation"]).reshape(3, 3) if "rotation" in r else quat_to_rotation(*r["q"])
            reg = SimilarityTransform(r["s"], R, r["t"])
        dim = doc.get("descriptor_dim")
        records = {k: doc[k] for k in ("landmarks", "poses")}
        records["observations"] = doc.get("observations", [])
    except (KeyError, TypeError, ValueError, GeometryError) as e:
        raise ParseError(f"invalid map header: {e!r}", path, 1) from None

    def rows(key):
        lines = element_lines(text, key)
        for n, entry in enumerate(records[key]):
            yield line_of(lines, n), entry

    landmarks = {}
    poses = {}
    observations: dict[int, list[Observation]] = {}
    for key in ("landmarks", "poses", "observations"):
        for line, e in rows(key):
            try:
                if key == "landmarks":
                    desc = e.get("descriptor")
                    if desc is not None and dim is not None and len(desc) != dim:
                        raise ValueError(f"descriptor length {len(desc)} != {dim}")
                    lm = Landmark(int(e["id"]), e["xyz"], desc, int(e["obs_count"]))
                    landmarks[lm.id] = lm
                elif key == "poses":
                    poses[int(e["frame_id"])] = Pose(_rotation_from(e), [e["tx"], e["ty"], e["tz"]])
                else:
                    observations.setdefault(int(e["landmark_id"]), []).append(
                        Observation(int(e["frame_id"]), int(e["keypoint"]), (float(e["u"]), float(e["v"]))))
            except (KeyError, TypeError, ValueError, AttributeError, GeometryError) as err:
                raise ParseError(f"bad {key[:-1]} record: {err}", path, line) from None
    gauge = tuple(int(g) for g in doc["gauge"]) if doc.get("gauge") else None
    return SfmModel(landmarks, poses, K, reg, observations, dist, gauge=gauge)


# ---------------------------------------------------------------------------
# Pairwise match file
# ---------------------------------------------------------------------------

MATCHES_FORMAT = "matches/1"


def save_matches(path, matches: dict, seed: tuple[int, int, Pose] | None = None) -> None:
    """Write ``{(frame_a, frame_b): [(ka, kb), ...]}`` plus an optional seed
    pair ``(frame_a, frame_b, pose_b_from_a)``."""
    pairs = []
    for (fa, fb) in sorted(matches):
        ms = [(m.query_index, m.train_index) if hasattr(m, "query_index") else m for m in matches[(fa, fb)]]
        pairs.append({"frames": [int(fa), int(fb)], "matches": [[int(a), int(b)] for a, b in ms]})
    doc = {"format": MATCHES_FORMAT, "pairs": pairs}
    if seed is not None:
        fa, fb, rel = seed
        doc["seed"] = {"frames": [int(fa), int(fb)], "pose": _pose_doc(rel)}
    Path(path).write_text(dumps_rows(doc, ("pairs",)))


def load_matches(path) -> tuple[dict, tuple[int, int, Pose] | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != MATCHES_FORMAT:
        raise ParseError(f"not a {MATCHES_FORMAT} document", path)
    try:
        matches = {}
        for p in doc["pairs"]:
            fa, fb = (int(x) for x in p["frames"])
            matches[(fa, fb)] = [(int(a), int(b)) for a, b in p["matches"]]
        seed = None
        if doc.get("seed"):
            s = doc["seed"]
            pd = s["pose"]
            seed = (int(s["frames"][0]), int(s["frames"][1]), Pose(_rotation_from(pd), [pd["tx"], pd["ty"], pd["tz"]]))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"invalid matches document: {e!r}", path) from None
    return matches, seed


# ---------------------------------------------------------------------------
# COLMAP text model
# ---------------------------------------------------------------------------

def _data_lines(path: Path):
    """Yield ``(lineno, text)`` for non-comment lines, keeping blank ones."""
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line.startswith("#"):
                continue
            yield lineno, line


def _floats(tokens, path, lineno, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric {what}", path, lineno) from None


def _camera_from_colmap(model: str, width: int, height: int, params, path, lineno):
    p = params
    need = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "SIMPLE_RADIAL": 4, "RADIAL": 5, "OPENCV": 8}
    if model not in need:
        raise UnsupportedCameraModel(f"{path}:{lineno}: camera model {model} is not supported")
    if len(p) != need[model]:
        raise ParseError(f"{model} expects {need[model]} parameters, got {len(p)}", path, lineno)
    d = DistortionCoeffs()
    if model == "SIMPLE_PINHOLE":
        fx = fy = p[0]; cx, cy = p[1:3]
    elif model == "PINHOLE":
        fx, fy, cx, cy = p
    elif model == "SIMPLE_RADIAL":
        fx = fy = p[0]; cx, cy = p[1:3]; d = DistortionCoeffs(k1=p[3])
    elif model == "RADIAL":
        fx = fy = p[0]; cx, cy = p[1:3]; d = DistortionCoeffs(k1=p[3], k2=p[4])
    else:
        fx, fy, cx, cy = p[:4]; d = DistortionCoeffs(k1=p[4], k2=p[5], p1=p[6], p2=p[7])
    return CameraIntrinsics(fx, fy, cx, cy, width, height), d


def import_colmap_text(directory) -> SfmModel:
    """Read ``cameras.txt``, ``images.txt`` and ``points3D.txt``.

    COLMAP poses are already world-to-camera, matching :class:`Pose`. Image
    ids become frame ids and 2D point indices become keypoint indices.
    Landmark descriptors are left empty; fill them with
    :func:`~landmarkloc.mapping.compute_landmark_descriptors`.
    """
    directory = Path(directory)
    cam_path, img_path, pts_path = (directory / n for n in ("cameras.txt", "images.txt", "points3D.txt"))
    for p in (cam_path, img_path, pts_path):
        if not p.exists():
            raise FileNotFoundError(p)

    cameras = {}
    for lineno, line in _data_lines(cam_path):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 4:
            raise ParseError("camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]", cam_path, lineno)
        try:
            cid, width, height = int(tok[0]), int(tok[2]), int(tok[3])
        except ValueError:
            raise ParseError("camera id, width and height must be integers", cam_path, lineno) from None
        params = _floats(tok[4:], cam_path, lineno, "camera parameter")
        cameras[cid] = _camera_from_colmap(tok[1], width, height, params, cam_path, lineno)

    poses: dict[int, Pose] = {}
    observations: dict[int, list[Observation]] = {}
    camera_ids = set()
    lines = _data_lines(img_path)
    for lineno, line in lines:
        if not line:
            continue
        tok = line.split()
        if len(tok) < 10:
            raise ParseError("image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", img_path, lineno)
        try:
            image_id, camera_id = int(tok[0]), int(tok[8])
        except ValueError:
            raise ParseError("image and camera ids must be integers", img_path, lineno) from None
        q = _floats(tok[1:5], img_path, lineno, "quaternion")
        t = _floats(tok[5:8], img_path, lineno, "translation")
        try:
            R = quat_to_rotation(*q)
        except ValueError:
            raise ParseError(f"degenerate quaternion {q}", img_path, lineno) from None
        if camera_id not in cameras:
            raise ParseError(f"unknown camera id {camera_id}", img_path, lineno)
        camera_ids.add(camera_id)
        poses[image_id] = Pose(R, t)

        pts_lineno, pts_line = next(lines, (lineno + 1, ""))
        ptok = pts_line.split()
        if len(ptok) % 3:
            raise ParseError("POINTS2D line must hold (X, Y, POINT3D_ID) triplets", img_path, pts_lineno)
        for k in range(len(ptok) // 3):
            x, y = _floats(ptok[3 * k:3 * k + 2], img_path, pts_lineno, "2D point")
            try:
                pid = int(ptok[3 * k + 2])
            except ValueError:
                raise ParseError("POINT3D_ID must be an integer", img_path, pts_lineno) from None
            if pid >= 0:
                observations.setdefault(pid, []).append(Observation(image_id, k, (x, y)))

    if not camera_ids:
        raise ParseError("no images in model", img_path)
    distinct = {cameras[c] for c in camera_ids}
    if len(distinct) > 1:
        raise UnsupportedCameraModel("images use more than one distinct camera; only single-camera models are supported")
    K, dist = distinct.pop()

    landmarks = {}
    for lineno, line in _data_lines(pts_path):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise ParseError("point line needs POINT3D_ID X Y Z R G B ERROR TRACK[]", pts_path, lineno)
        try:
            pid = int(tok[0])
        except ValueError:
            raise ParseError("POINT3D_ID must be an integer", pts_path, lineno) from None
        xyz = _floats(tok[1:4], pts_path, lineno, "coordinate")
        n_track = (len(tok) - 8) // 2
        landmarks[pid] = Landmark(pid, xyz, None, n_track)
        observations.setdefault(pid, [])

    unknown = set(observations) - set(landmarks)
    if unknown:
        raise ParseError(f"images reference unknown 3D points {sorted(unknown)[:5]}", img_path)
    observations = {k: v for k, v in observations.items() if v}
    return SfmModel(landmarks, poses, K, None, observations, None if dist.is_zero else dist)


def model_io(model_or_path, path=None, direction: str = "save"):
    """Dispatch ``save`` / ``load`` / ``import_colmap_text``."""
    if direction == "save":
        save_map(model_or_path, path)
        return path
    if direction == "load":
        return load_map(model_or_path)
    if direction == "import_colmap_text":
        return import_colmap_text(model_or_path)
    raise ValueError(f"unknown direction {direction!r}")
