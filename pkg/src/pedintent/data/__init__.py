from .io import FrameStore, load_annotations, save_annotations
from .preprocess import (
    ClipConfig,
    assemble_nonvisual,
    bilinear_resize,
    build_global_context,
    build_local_context,
    build_local_surround,
    delta_encode,
    extract_window_at,
    extract_windows,
    resample_balance,
    split_tracks,
)
from .synthetic import RULES, generate_synthetic, motion_rule_oracle
from .types import (
    CHANNEL_WIDTHS,
    NONVISUAL_CHANNELS,
    SPEED_CATEGORIES,
    VISUAL_INPUTS,
    BoundingBox,
    Center,
    Frame,
    ObservationWindow,
    PedestrianTrack,
    TrackFrame,
    speed_one_hot,
    validate_pose,
)

__all__ = [
    "FrameStore",
    "load_annotations",
    "save_annotations",
    "ClipConfig",
    "assemble_nonvisual",
    "bilinear_resize",
    "build_global_context",
    "build_local_context",
    "build_local_surround",
    "delta_encode",
    "extract_window_at",
    "extract_windows",
    "resample_balance",
    "split_tracks",
    "RULES",
    "generate_synthetic",
    "motion_rule_oracle",
    "CHANNEL_WIDTHS",
    "NONVISUAL_CHANNELS",
    "SPEED_CATEGORIES",
    "VISUAL_INPUTS",
    "BoundingBox",
    "Center",
    "Frame",
    "ObservationWindow",
    "PedestrianTrack",
    "TrackFrame",
    "speed_one_hot",
    "validate_pose",
]
