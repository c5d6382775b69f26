"""Offline map construction and map file handling."""

from .bundle import BundleConfig, bundle_adjust, prune_landmarks
from .descriptors import apply_registration, compute_landmark_descriptors, mean_descriptor, register_model
from .io import MAP_FORMAT, MATCHES_FORMAT, import_colmap_text, load_map, load_matches, model_io, save_map, save_matches
from .model import AdjustmentReport, Landmark, Observation, SfmModel, Track
from .reconstruct import ReconstructionConfig, incremental_reconstruct
from .tracks import build_tracks, match_frames
from .triangulation import camera_center, point_depth, triangulate_dlt, triangulate_multiview

__all__ = [
    "AdjustmentReport", "BundleConfig", "Landmark", "MAP_FORMAT", "MATCHES_FORMAT", "Observation", "ReconstructionConfig",
    "SfmModel", "Track", "apply_registration", "build_tracks", "bundle_adjust", "camera_center",
    "compute_landmark_descriptors", "import_colmap_text", "incremental_reconstruct", "load_map", "load_matches",
    "match_frames", "mean_descriptor", "model_io", "point_depth", "prune_landmarks", "register_model",
    "save_map", "save_matches", "triangulate_dlt", "triangulate_multiview",
]
