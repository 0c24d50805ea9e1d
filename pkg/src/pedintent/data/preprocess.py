"""Feature preprocessing: delta encoding, crop construction, windowing.

Crops follow the pipeline: enlarge the box about its center, crop with
zero padding where the box leaves the frame, bilinear-resize (corner
aligned), and scale intensities to [0, 1] by dividing by 255. The standard
crop sizes are 112/128/224 square for local inputs and 112/224 for the
global frame; smaller sizes are accepted for desk-scale runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import (
    AlignmentError,
    BalanceError,
    ConfigError,
    DegenerateCropError,
    WindowError,
)
from .types import (
    CHANNEL_WIDTHS,
    NONVISUAL_CHANNELS,
    BoundingBox,
    Frame,
    ObservationWindow,
    PedestrianTrack,
)

GREY_MASK_VALUE = 128  # pre-normalization grey used to hide the pedestrian


def delta_encode(seq: np.ndarray) -> np.ndarray:
    """Subtract the first frame from the rest and drop it: out[j] = seq[j+1] - seq[0]."""
    arr = np.asarray(seq)
    if arr.shape[0] < 2:
        raise WindowError("delta encoding needs at least 2 frames")
    return arr[1:] - arr[0]


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of an (H, W, C) float image."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(np.float32)[:, None, None]
    fx = (xs - x0).astype(np.float32)[None, :, None]
    ia = img[y0[:, None], x0[None, :]]
    ib = img[y0[:, None], x1[None, :]]
    ic = img[y1[:, None], x0[None, :]]
    idd = img[y1[:, None], x1[None, :]]
    top = ia + fx * (ib - ia)
    bot = ic + fx * (idd - ic)
    return top + fy * (bot - top)


def _pixel_box(x_tl: float, y_tl: float, x_br: float, y_br: float) -> tuple[int, int, int, int]:
    """Half-open integer pixel box covering the float box."""
    return (
        int(np.floor(x_tl)),
        int(np.floor(y_tl)),
        int(np.ceil(x_br)),
        int(np.ceil(y_br)),
    )


def _enlarged(bbox: BoundingBox, ratio: float) -> tuple[float, float, float, float]:
    cx = (bbox.x_tl + bbox.x_br) / 2.0
    cy = (bbox.y_tl + bbox.y_br) / 2.0
    half_w = bbox.width * ratio / 2.0
    half_h = bbox.height * ratio / 2.0
    return cx - half_w, cy - half_h, cx + half_w, cy + half_h


def _crop_padded(pixels: np.ndarray, box: tuple[int, int, int, int]) -> np.ndarray:
    """Crop a half-open pixel box, zero-padding outside the frame."""
    x0, y0, x1, y1 = box
    if x1 <= x0 or y1 <= y0:
        raise DegenerateCropError("crop region is empty")
    h, w = pixels.shape[:2]
    if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
        raise DegenerateCropError("crop region lies entirely outside the frame")
    out = np.zeros((y1 - y0, x1 - x0, 3), dtype=np.float32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x1, w), min(y1, h)
    out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = pixels[sy0:sy1, sx0:sx1] / 255.0
    return out


def build_local_context(frame: Frame, bbox: BoundingBox, ratio: float, size: tuple[int, int]) -> np.ndarray:
    """Crop around the pedestrian, enlarged by `ratio` (>= 1) about the box center."""
    if ratio < 1.0:
        raise ConfigError("enlargement ratio must be >= 1")
    box = _pixel_box(*_enlarged(bbox, ratio))
    patch = _crop_padded(frame.pixels, box)
    return bilinear_resize(patch, size[0], size[1])


def build_local_surround(frame: Frame, bbox: BoundingBox, ratio: float, size: tuple[int, int]) -> np.ndarray:
    """Like the local context, but the un-enlarged pedestrian box is greyed out first."""
    if ratio < 1.0:
        raise ConfigError("enlargement ratio must be >= 1")
    x0, y0, x1, y1 = _pixel_box(bbox.x_tl, bbox.y_tl, bbox.x_br, bbox.y_br)
    masked = frame.pixels.copy()
    masked[max(y0, 0) : max(y1, 0), max(x0, 0) : max(x1, 0)] = GREY_MASK_VALUE
    grey_frame = Frame(frame.height, frame.width, masked)
    return build_local_context(grey_frame, bbox, ratio, size)


def build_global_context(frame: Frame, size: tuple[int, int]) -> np.ndarray:
    """Whole-frame resize to `size`, intensities scaled to [0, 1]."""
    return bilinear_resize(frame.pixels.astype(np.float32) / 255.0, size[0], size[1])


@dataclass(frozen=True)
class ClipConfig:
    """Which visual inputs to render and at what geometry."""

    inputs: tuple = ()
    ratio: float = 1.5
    local_size: tuple = (32, 32)
    global_size: tuple = (32, 32)


class FrameSource:
    """Minimal interface windowing needs: frame lookup by global index."""

    def get(self, index: int) -> Frame:  # pragma: no cover - interface stub
        raise NotImplementedError


def _window_features(records: Sequence, tte: int, pid: str, clips: dict) -> ObservationWindow:
    bbox = np.stack([r.bbox.as_array() for r in records])
    center = np.stack([r.center.as_array() for r in records])
    pose = np.stack([r.pose for r in records])
    from .types import speed_one_hot

    speed = np.stack([speed_one_hot(r.speed) for r in records])
    return ObservationWindow(
        bbox_delta=delta_encode(bbox).astype(np.float32),
        center_delta=delta_encode(center).astype(np.float32),
        pose=pose[1:].astype(np.float32),
        speed=speed[1:].astype(np.float32),
        label=0,  # caller overwrites
        time_to_event=tte,
        pedestrian_id=pid,
        **clips,
    )


def _build_clips(records: Sequence, frames: FrameSource, cfg: ClipConfig) -> dict:
    clips: dict[str, np.ndarray] = {}
    for name in cfg.inputs:
        per_frame = []
        for rec in records:
            frame = frames.get(rec.frame)
            if name == "local_context":
                per_frame.append(build_local_context(frame, rec.bbox, cfg.ratio, cfg.local_size))
            elif name == "local_surround":
                per_frame.append(build_local_surround(frame, rec.bbox, cfg.ratio, cfg.local_size))
            elif name == "global_context":
                per_frame.append(build_global_context(frame, cfg.global_size))
            else:
                raise ConfigError(f"unknown visual input {name!r}")
        clips[name] = np.stack(per_frame)
    return clips


def extract_windows(
    track: PedestrianTrack,
    obs_len: int,
    tte_range: tuple[int, int],
    stride: int,
    frames: Optional[FrameSource] = None,
    clip_cfg: Optional[ClipConfig] = None,
) -> list[ObservationWindow]:
    """One window per time-to-event in {lo, lo+stride, ...} <= hi.

    Each window observes the raw frames [event - tte - obs_len + 1,
    event - tte]; windows needing frames the track does not contain are
    skipped. Returns an empty list (not an error) for short tracks.
    """
    if obs_len < 2:
        raise ConfigError("obs_len must be >= 2")
    lo, hi = tte_range
    if lo > hi or lo < 0:
        raise ConfigError(f"invalid tte range [{lo}, {hi}]")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if clip_cfg is not None and clip_cfg.inputs and frames is None:
        raise ConfigError("clip construction requires a frame source")

    by_index = track.frame_map()
    windows: list[ObservationWindow] = []
    for tte in range(lo, hi + 1, stride):
        t_end = track.event_frame - tte
        needed = range(t_end - obs_len + 1, t_end + 1)
        if needed[0] < 0 or any(i not in by_index for i in needed):
            continue
        records = [by_index[i] for i in needed]
        clips = _build_clips(records, frames, clip_cfg) if clip_cfg and clip_cfg.inputs else {}
        window = _window_features(records, tte, track.pedestrian_id, clips)
        window.label = track.label
        windows.append(window)
    return windows


def extract_window_at(
    track: PedestrianTrack,
    obs_len: int,
    end_frame: int,
    frames: Optional[FrameSource] = None,
    clip_cfg: Optional[ClipConfig] = None,
) -> ObservationWindow:
    """Single window whose last observed frame is `end_frame` (for prediction)."""
    by_index = track.frame_map()
    needed = range(end_frame - obs_len + 1, end_frame + 1)
    if needed[0] < 0 or any(i not in by_index for i in needed):
        raise WindowError(f"track {track.pedestrian_id!r} lacks frames {needed[0]}..{end_frame}")
    records = [by_index[i] for i in needed]
    clips = _build_clips(records, frames, clip_cfg) if clip_cfg and clip_cfg.inputs else {}
    window = _window_features(records, track.event_frame - end_frame, track.pedestrian_id, clips)
    window.label = track.label
    return window


def assemble_nonvisual(window: ObservationWindow, channels: Sequence[str]) -> np.ndarray:
    """Concatenate the enabled channels in the fixed order bbox, center, pose, speed."""
    if not channels:
        raise ConfigError("at least one non-visual channel must be enabled")
    unknown = [c for c in channels if c not in NONVISUAL_CHANNELS]
    if unknown:
        raise ConfigError(f"unknown non-visual channels {unknown}")
    parts = []
    arrays = {
        "bbox": window.bbox_delta,
        "center": window.center_delta,
        "pose": window.pose,
        "speed": window.speed,
    }
    t = window.n_frames
    for name in NONVISUAL_CHANNELS:
        if name not in channels:
            continue
        arr = arrays[name]
        if arr.shape != (t, CHANNEL_WIDTHS[name]):
            raise AlignmentError(f"channel {name} has shape {arr.shape}, expected {(t, CHANNEL_WIDTHS[name])}")
        parts.append(arr)
    return np.hstack(parts).astype(np.float32)


def resample_balance(windows: Sequence[ObservationWindow], seed: int) -> list[ObservationWindow]:
    """Upsample the minority class with replacement until class counts match."""
    windows = list(windows)
    labels = np.array([w.label for w in windows])
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise BalanceError("resampling needs both classes present")
    if len(pos) == len(neg):
        return windows
    minority = pos if len(pos) < len(neg) else neg
    deficit = abs(len(pos) - len(neg))
    rng = np.random.default_rng(seed)
    extra = rng.choice(minority, size=deficit, replace=True)
    return windows + [windows[i] for i in extra]


def split_tracks(
    tracks: Sequence[PedestrianTrack],
    seed: int,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> dict[str, list[PedestrianTrack]]:
    """Deterministic train/val/test split by track, so no pedestrian straddles splits."""
    order = np.random.default_rng(seed).permutation(len(tracks))
    n = len(tracks)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    shuffled = [tracks[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val :],
    }
