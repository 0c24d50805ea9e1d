"""Domain types and preprocessing: delta encoding, crops, windowing,
channel assembly, rebalancing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedintent.data import (
    BoundingBox,
    Center,
    ClipConfig,
    Frame,
    ObservationWindow,
    PedestrianTrack,
    TrackFrame,
    assemble_nonvisual,
    bilinear_resize,
    build_global_context,
    build_local_context,
    build_local_surround,
    delta_encode,
    extract_windows,
    resample_balance,
    speed_one_hot,
)
from pedintent.errors import (
    AlignmentError,
    BalanceError,
    ConfigError,
    DegenerateCropError,
    IntegrityError,
    WindowError,
)


def make_frame(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    return Frame(pixels.shape[0], pixels.shape[1], pixels)


def make_track(n=20, pid="p0", start=0, label=1, vx=2.0):
    records = []
    for t in range(n):
        x = 10.0 + vx * t
        bbox = BoundingBox(x, 5.0, x + 8.0, 21.0)
        records.append(TrackFrame(start + t, bbox, bbox.center(), np.zeros(36), "stopped"))
    return PedestrianTrack(pid, tuple(records), start + n - 1, label)


class TestTypes:
    def test_bbox_invariants(self):
        with pytest.raises(IntegrityError):
            BoundingBox(5.0, 0.0, 1.0, 4.0)
        with pytest.raises(IntegrityError):
            BoundingBox(-1.0, 0.0, 1.0, 4.0)

    def test_center_is_midpoint(self):
        c = BoundingBox(2.0, 4.0, 6.0, 10.0).center()
        assert (c.x, c.y) == (4.0, 7.0)

    def test_pose_arity(self):
        bbox = BoundingBox(0, 0, 1, 1)
        with pytest.raises(IntegrityError):
            TrackFrame(0, bbox, bbox.center(), np.zeros(35), "stopped")

    def test_speed_one_hot(self):
        assert speed_one_hot("moving_fast").tolist() == [0, 0, 1, 0, 0]
        with pytest.raises(IntegrityError):
            speed_one_hot("warp")

    def test_track_monotone_frames(self):
        bbox = BoundingBox(0, 0, 1, 1)
        recs = [TrackFrame(i, bbox, bbox.center(), np.zeros(36), "stopped") for i in (0, 2, 2)]
        with pytest.raises(IntegrityError):
            PedestrianTrack("p", tuple(recs), 5, 0)

    def test_window_channel_alignment(self):
        with pytest.raises(IntegrityError):
            ObservationWindow(
                bbox_delta=np.zeros((3, 4), np.float32),
                center_delta=np.zeros((2, 2), np.float32),
                pose=np.zeros((3, 36), np.float32),
                speed=np.zeros((3, 5), np.float32),
                label=0,
                time_to_event=30,
            )


class TestDeltaEncode:
    def test_subtracts_first_frame(self):
        boxes = np.array([[10, 10, 20, 20], [12, 11, 22, 21], [14, 12, 24, 22]], dtype=float)
        assert delta_encode(boxes).tolist() == [[2, 1, 2, 1], [4, 2, 4, 2]]

    def test_identical_frames_zero(self):
        seq = np.tile([3.0, 7.0], (5, 1))
        assert np.array_equal(delta_encode(seq), np.zeros((4, 2)))

    def test_translation_invariance(self):
        # pixel-grid coordinates (integers and halves): shifting by a
        # constant leaves the deltas bit-identical
        rng = np.random.default_rng(0)
        seq = rng.integers(0, 200, size=(6, 4)).astype(np.float64) * 0.5
        shifted = seq + np.array([5.0, 5.0, 5.0, 5.0])
        assert np.array_equal(delta_encode(seq), delta_encode(shifted))

    @given(st.integers(min_value=2, max_value=12), st.floats(-1000, 1000, allow_nan=False))
    @settings(max_examples=40, deadline=None)
    def test_translation_invariance_property(self, n, c):
        seq = np.arange(n * 3, dtype=np.float64).reshape(n, 3) * 1.25
        assert np.allclose(delta_encode(seq + c), delta_encode(seq), atol=1e-9)

    def test_too_short(self):
        with pytest.raises(WindowError):
            delta_encode(np.zeros((1, 4)))


def reference_bilinear(img, out_h, out_w):
    """Independent corner-aligned bilinear oracle: plain loops."""
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w, img.shape[2]), dtype=np.float64)
    for i in range(out_h):
        for j in range(out_w):
            y = i * (h - 1) / (out_h - 1) if out_h > 1 else 0.0
            x = j * (w - 1) / (out_w - 1) if out_w > 1 else 0.0
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
            bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
            out[i, j] = top + fy * (bot - top)
    return out


class TestResize:
    def test_checkerboard_2x2_to_4x4(self):
        # corner-aligned positions 0, 1/3, 2/3, 1 between a=1 and b=0
        img = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
        out = bilinear_resize(img, 4, 4)
        expected_row0 = [1.0, 2 / 3, 1 / 3, 0.0]
        assert np.allclose(out[0, :, 0], expected_row0, atol=1e-6)
        assert np.allclose(out[:, 0, 0], expected_row0, atol=1e-6)
        assert np.allclose(out[3, :, 0], expected_row0[::-1], atol=1e-6)

    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(4)
        img = rng.random((5, 7, 3))
        out = bilinear_resize(img, 9, 4)
        assert np.allclose(out, reference_bilinear(img, 9, 4), atol=1e-5)

    def test_constant_image_exact(self):
        img = np.full((3, 5, 3), 0.625, dtype=np.float32)
        out = bilinear_resize(img, 7, 11)
        assert np.all(out == np.float32(0.625))


def reference_crop(pixels, bbox, ratio, size):
    """Loop-based oracle for the enlarged, zero-padded, resized crop."""
    cx, cy = (bbox.x_tl + bbox.x_br) / 2, (bbox.y_tl + bbox.y_br) / 2
    hw, hh = (bbox.x_br - bbox.x_tl) * ratio / 2, (bbox.y_br - bbox.y_tl) * ratio / 2
    x0, y0 = int(np.floor(cx - hw)), int(np.floor(cy - hh))
    x1, y1 = int(np.ceil(cx + hw)), int(np.ceil(cy + hh))
    patch = np.zeros((y1 - y0, x1 - x0, 3), dtype=np.float64)
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            if 0 <= yy < pixels.shape[0] and 0 <= xx < pixels.shape[1]:
                patch[yy - y0, xx - x0] = pixels[yy, xx] / 255.0
    return reference_bilinear(patch, size[0], size[1])


class TestCrops:
    def test_ratio_one_is_exact_bbox(self):
        rng = np.random.default_rng(1)
        pixels = rng.integers(0, 255, size=(16, 16, 3)).astype(np.uint8)
        frame = make_frame(pixels)
        bbox = BoundingBox(4.0, 2.0, 12.0, 10.0)
        out = build_local_context(frame, bbox, 1.0, (8, 8))
        assert np.allclose(out, pixels[2:10, 4:12] / 255.0, atol=1e-6)

    def test_white_frame_is_ones(self):
        frame = make_frame(np.full((16, 16, 3), 255, np.uint8))
        out = build_local_context(frame, BoundingBox(2, 2, 10, 10), 1.5, (12, 12))
        assert np.all(out == 1.0)

    def test_corner_bbox_pads_zeros(self):
        rng = np.random.default_rng(2)
        pixels = rng.integers(50, 255, size=(16, 16, 3)).astype(np.uint8)
        frame = make_frame(pixels)
        bbox = BoundingBox(0.0, 0.0, 8.0, 8.0)
        ratio = 1.5
        out = build_local_context(frame, bbox, ratio, (12, 12))
        oracle = reference_crop(pixels, bbox, ratio, (12, 12))
        assert np.allclose(out, oracle, atol=1e-5)
        assert out[0, 0].tolist() == [0.0, 0.0, 0.0]

    def test_matches_oracle_generic(self):
        rng = np.random.default_rng(3)
        pixels = rng.integers(0, 255, size=(16, 16, 3)).astype(np.uint8)
        frame = make_frame(pixels)
        bbox = BoundingBox(5.0, 3.0, 11.0, 13.0)
        out = build_local_context(frame, bbox, 1.5, (10, 8))
        assert np.allclose(out, reference_crop(pixels, bbox, 1.5, (10, 8)), atol=1e-5)

    def test_degenerate_crop(self):
        frame = make_frame(np.zeros((8, 8, 3), np.uint8))
        with pytest.raises(DegenerateCropError):
            build_local_context(frame, BoundingBox(3.0, 3.0, 3.0, 7.0), 1.0, (4, 4))
        with pytest.raises(ConfigError):
            build_local_context(frame, BoundingBox(1, 1, 2, 2), 0.5, (4, 4))

    def test_outside_frame_crop(self):
        frame = make_frame(np.zeros((8, 8, 3), np.uint8))
        with pytest.raises(DegenerateCropError):
            build_local_context(frame, BoundingBox(20.0, 20.0, 25.0, 25.0), 1.0, (4, 4))


class TestLocalSurround:
    def _setting(self):
        rng = np.random.default_rng(5)
        pixels = rng.integers(0, 255, size=(16, 16, 3)).astype(np.uint8)
        # bbox 4x4 at (6,6); ratio 1.5 -> enlarged box [5, 11) is 6x6, so a
        # (6, 6) output size makes the resize an exact identity gather
        bbox = BoundingBox(6.0, 6.0, 10.0, 10.0)
        return pixels, bbox

    def test_interior_is_grey(self):
        pixels, bbox = self._setting()
        out = build_local_surround(make_frame(pixels), bbox, 1.5, (6, 6))
        # the un-enlarged bbox [6,10) maps to crop rows/cols 1..4
        assert np.all(out[1:5, 1:5] == np.float32(128.0 / 255.0))

    def test_exterior_equals_local_context(self):
        pixels, bbox = self._setting()
        ctx = build_local_context(make_frame(pixels), bbox, 1.5, (6, 6))
        srd = build_local_surround(make_frame(pixels), bbox, 1.5, (6, 6))
        mask = np.zeros((6, 6), dtype=bool)
        mask[1:5, 1:5] = True
        assert np.array_equal(srd[~mask], ctx[~mask])

    def test_interior_pixels_do_not_leak(self):
        pixels, bbox = self._setting()
        altered = pixels.copy()
        altered[6:10, 6:10] = 255 - altered[6:10, 6:10]
        a = build_local_surround(make_frame(pixels), bbox, 1.5, (8, 12))
        b = build_local_surround(make_frame(altered), bbox, 1.5, (8, 12))
        assert np.array_equal(a, b)


class TestGlobalContext:
    def test_identity_size(self):
        rng = np.random.default_rng(6)
        pixels = rng.integers(0, 255, size=(12, 10, 3)).astype(np.uint8)
        out = build_global_context(make_frame(pixels), (12, 10))
        assert np.allclose(out, pixels / 255.0, atol=1e-6)

    def test_constant_color(self):
        out = build_global_context(make_frame(np.full((6, 8, 3), 51, np.uint8)), (4, 4))
        assert np.allclose(out, 51 / 255.0)


class TestExtractWindows:
    def test_index_arithmetic(self):
        track = make_track(n=101, start=0)
        wins = extract_windows(track, 16, (30, 30), 15)
        assert len(wins) == 1
        # event 100, tte 30 -> raw frames 55..70 -> 15 delta rows
        assert wins[0].n_frames == 15
        assert wins[0].time_to_event == 30
        # first delta row = bbox(56) - bbox(55) from first frame removal
        expected = track.bbox_array()[56] - track.bbox_array()[55]
        assert np.allclose(wins[0].bbox_delta[0], expected)

    def test_enumerates_tte_grid(self):
        track = make_track(n=101)
        wins = extract_windows(track, 16, (30, 60), 15)
        assert [w.time_to_event for w in wins] == [30, 45, 60]

    def test_short_track_empty(self):
        track = make_track(n=15)
        assert extract_windows(track, 16, (0, 0), 15) == []

    def test_never_overlaps_post_event_frames(self):
        track = make_track(n=101)
        for w in extract_windows(track, 16, (30, 60), 5):
            assert w.time_to_event >= 30

    def test_gap_skipped(self):
        track = make_track(n=101)
        # remove one frame inside the tte=30 window span (frames 55..70)
        records = tuple(r for r in track.frames if r.frame != 60)
        gappy = PedestrianTrack("p0", records, track.event_frame, track.label)
        wins = extract_windows(gappy, 16, (30, 60), 15)
        assert [w.time_to_event for w in wins] == [45, 60]

    def test_bad_params(self):
        track = make_track()
        with pytest.raises(ConfigError):
            extract_windows(track, 1, (30, 60), 15)
        with pytest.raises(ConfigError):
            extract_windows(track, 16, (60, 30), 15)


class TestAssemble:
    def _window(self):
        track = make_track(n=101)
        return extract_windows(track, 16, (30, 30), 15)[0]

    def test_all_channels_width(self):
        assert assemble_nonvisual(self._window(), ("bbox", "center", "pose", "speed")).shape == (15, 47)

    def test_bbox_only_width(self):
        assert assemble_nonvisual(self._window(), ("bbox",)).shape == (15, 4)

    def test_empty_channels(self):
        with pytest.raises(ConfigError):
            assemble_nonvisual(self._window(), ())

    def test_fixed_column_order(self):
        w = self._window()
        out = assemble_nonvisual(w, ("speed", "bbox"))  # order is canonical, not call order
        assert np.array_equal(out[:, :4], w.bbox_delta)
        assert np.array_equal(out[:, 4:], w.speed)

    def test_misaligned_channel(self):
        w = self._window()
        w.pose = w.pose[:-1]
        with pytest.raises(IntegrityError):
            # alignment is enforced at construction; rebuilt windows cannot
            # disagree, so emulate via direct construction
            ObservationWindow(w.bbox_delta, w.center_delta, w.pose, w.speed, 0, 30)


class TestResample:
    def _windows(self, n_pos, n_neg):
        track = make_track(n=101)
        base = extract_windows(track, 16, (30, 30), 15)[0]
        wins = []
        for i in range(n_pos + n_neg):
            w = ObservationWindow(
                base.bbox_delta.copy(), base.center_delta.copy(), base.pose.copy(), base.speed.copy(),
                label=1 if i < n_pos else 0, time_to_event=30, pedestrian_id=f"w{i}",
            )
            wins.append(w)
        return wins

    def test_balances_counts(self):
        out = resample_balance(self._windows(30, 70), seed=0)
        labels = [w.label for w in out]
        assert labels.count(1) == 70 and labels.count(0) == 70

    def test_already_balanced_unchanged(self):
        wins = self._windows(10, 10)
        assert resample_balance(wins, seed=0) == wins

    def test_majority_multiset_preserved_and_members_exist(self):
        wins = self._windows(5, 12)
        out = resample_balance(wins, seed=3)
        neg_in = [w for w in wins if w.label == 0]
        neg_out = [w for w in out if w.label == 0]
        assert neg_out[: len(neg_in)] == neg_in and len(neg_out) == len(neg_in)
        pos_in = {id(w) for w in wins if w.label == 1}
        assert all(id(w) in pos_in for w in out if w.label == 1)

    def test_deterministic(self):
        wins = self._windows(4, 9)
        a = [id(w) for w in resample_balance(wins, seed=5)]
        b = [id(w) for w in resample_balance(wins, seed=5)]
        assert a == b

    def test_single_class(self):
        with pytest.raises(BalanceError):
            resample_balance(self._windows(5, 0), seed=0)