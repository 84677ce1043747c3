import numpy as np
import pytest

from motion_transfer.pose import (LIMB_PAIRS, N_JOINTS, POSE_MAP_CHANNELS,
                                  PoseSequence, load_keypoints, rasterize_pose,
                                  save_keypoints, select_appearance_frame,
                                  smooth_sequence)


def seq_from_series(series, conf=None):
    """Pose sequence whose joint-0 x-coordinate follows `series`."""
    t = len(series)
    frames = np.zeros((t, N_JOINTS, 3))
    frames[:, :, 2] = 1.0
    frames[:, 0, 0] = series
    if conf is not None:
        frames[:, 0, 2] = conf
    return PoseSequence(frames)


def savgol_oracle(series, t, window, polyorder):
    """Independent least-squares polynomial fit over the clipped window."""
    half = window // 2
    lo, hi = max(0, t - half), min(len(series), t + half + 1)
    xs = np.arange(lo, hi) - t
    coeffs = np.polyfit(xs, series[lo:hi], polyorder)
    return coeffs[-1]


class TestSmoothSequence:
    def test_constant_sequence_unchanged(self):
        seq = seq_from_series(np.full(9, 7.0))
        out = smooth_sequence(seq, window=5, polyorder=2)
        assert np.allclose(out.frames[:, 0, 0], 7.0, atol=1e-9)

    def test_quadratic_sequence_unchanged(self):
        t = np.arange(11, dtype=float)
        out = smooth_sequence(seq_from_series(t**2), window=5, polyorder=2)
        assert np.allclose(out.frames[:, 0, 0], t**2, atol=1e-9)

    def test_impulse_central_value(self):
        # central coefficients (-3, 12, 17, 12, -3)/35 for window 5, order 2
        out = smooth_sequence(seq_from_series([0, 0, 1, 0, 0]), 5, 2)
        assert out.frames[2, 0, 0] == pytest.approx(17 / 35, abs=1e-12)

    def test_matches_least_squares_oracle(self, rng):
        series = rng.normal(size=15)
        out = smooth_sequence(seq_from_series(series), window=7, polyorder=3)
        for t in range(15):
            expected = savgol_oracle(series, t, 7, 3)
            assert out.frames[t, 0, 0] == pytest.approx(expected, abs=1e-9)

    def test_confidences_pass_through(self, rng):
        frames = rng.uniform(0.1, 1.0, size=(9, N_JOINTS, 3))
        seq = PoseSequence(frames)
        out = smooth_sequence(seq, 5, 2)
        assert np.array_equal(out.frames[:, :, 2], frames[:, :, 2])

    def test_undetected_excluded_from_fit(self):
        # joint 0 detected only at even times; odd-time values are huge
        # outliers that must not leak into the fits
        series = np.array([0.0, 100.0, 2.0, 100.0, 4.0, 100.0, 6.0])
        conf = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
        out = smooth_sequence(seq_from_series(series, conf), 5, 2)
        # detected samples follow the line 2t -> reproduced exactly
        assert out.frames[2, 0, 0] == pytest.approx(2.0, abs=1e-9)
        # undetected samples pass through unchanged
        assert out.frames[1, 0, 0] == 100.0

    def test_all_undetected_passes_through(self):
        series = np.array([1.0, 5.0, 9.0, 2.0, 7.0])
        out = smooth_sequence(seq_from_series(series, np.zeros(5)), 5, 2)
        assert np.array_equal(out.frames[:, 0, 0], series)

    def test_translation_commutes(self, rng):
        series = rng.normal(size=12)
        base = smooth_sequence(seq_from_series(series), 5, 2)
        shifted = smooth_sequence(seq_from_series(series + 13.5), 5, 2)
        assert np.allclose(shifted.frames[:, 0, 0],
                           base.frames[:, 0, 0] + 13.5, atol=1e-9)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            smooth_sequence(seq_from_series(np.zeros(8)), window=4, polyorder=2)

    def test_window_longer_than_sequence_rejected(self):
        with pytest.raises(ValueError):
            smooth_sequence(seq_from_series(np.zeros(3)), window=5, polyorder=2)

    def test_window_not_exceeding_polyorder_rejected(self):
        with pytest.raises(ValueError):
            smooth_sequence(seq_from_series(np.zeros(9)), window=5, polyorder=5)


class TestSelectAppearanceFrame:
    def test_argmax_of_confidence_sums(self):
        frames = np.zeros((3, N_JOINTS, 3))
        frames[0, :, 2] = 10.2 / N_JOINTS
        frames[1, :, 2] = 17.9 / N_JOINTS
        frames[2, :, 2] = 14.1 / N_JOINTS
        assert select_appearance_frame(PoseSequence(frames)) == 1

    def test_tie_breaks_to_lowest_index(self):
        frames = np.zeros((4, N_JOINTS, 3))
        frames[:, :, 2] = 0.5
        assert select_appearance_frame(PoseSequence(frames)) == 0

    def test_matches_summation_oracle(self, rng):
        frames = np.zeros((3, N_JOINTS, 3))
        frames[:, :, 2] = rng.uniform(size=(3, N_JOINTS))
        expected = int(np.argmax([sum(f[i, 2] for i in range(N_JOINTS))
                                  for f in frames]))
        assert select_appearance_frame(PoseSequence(frames)) == expected

    def test_invariant_under_keypoint_permutation(self, rng):
        frames = np.zeros((5, N_JOINTS, 3))
        frames[:, :, 2] = rng.uniform(size=(5, N_JOINTS))
        perm = rng.permutation(N_JOINTS)
        assert select_appearance_frame(PoseSequence(frames)) == \
            select_appearance_frame(PoseSequence(frames[:, perm]))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            PoseSequence(np.zeros((0, N_JOINTS, 3)))


class TestRasterizePose:
    def frame_with(self, joint, x, y, c=1.0):
        frame = np.zeros((N_JOINTS, 3))
        frame[joint] = (x, y, c)
        return frame

    def test_gaussian_peak_at_keypoint(self):
        out = rasterize_pose(self.frame_with(0, 5, 5), 16, 16, sigma=1.0)
        assert out[0, 5, 5] == pytest.approx(1.0)

    def test_undetected_joint_zero_channel(self):
        out = rasterize_pose(self.frame_with(0, 5, 5, c=0.0), 16, 16, sigma=1.0)
        assert not out[0].any()

    def test_gaussian_value_one_pixel_away(self):
        out = rasterize_pose(self.frame_with(0, 5, 5), 16, 16, sigma=1.0)
        assert out[0, 5, 6] == pytest.approx(np.exp(-0.5), abs=1e-6)

    def test_off_image_keypoint_clipped_not_error(self):
        out = rasterize_pose(self.frame_with(0, -30, -30), 16, 16, sigma=2.0)
        assert out[0].max() < 1e-6

    def test_output_in_unit_interval(self, rng):
        frame = np.zeros((N_JOINTS, 3))
        frame[:, 0] = rng.uniform(0, 32, N_JOINTS)
        frame[:, 1] = rng.uniform(0, 32, N_JOINTS)
        frame[:, 2] = 1.0
        out = rasterize_pose(frame, 32, 32, sigma=2.0)
        assert out.shape == (POSE_MAP_CHANNELS, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_limb_channel_drawn_between_detected_joints(self):
        frame = np.zeros((N_JOINTS, 3))
        a, b = LIMB_PAIRS[0]
        frame[a] = (4, 8, 1.0)
        frame[b] = (12, 8, 1.0)
        out = rasterize_pose(frame, 16, 16, sigma=1.0)
        assert out[N_JOINTS, 8, 8] == pytest.approx(1.0)
        assert out[N_JOINTS + 1].max() == 0.0  # other limbs undetected

    def test_channel_sum_monotone_in_sigma(self):
        frame = self.frame_with(0, 16, 16)
        sums = [rasterize_pose(frame, 32, 32, sigma=s)[0].sum()
                for s in (1.0, 2.0, 4.0)]
        assert sums[0] < sums[1] < sums[2]

    def test_invalid_arguments(self):
        frame = self.frame_with(0, 5, 5)
        with pytest.raises(ValueError):
            rasterize_pose(frame, 0, 16, sigma=1.0)
        with pytest.raises(ValueError):
            rasterize_pose(frame, 16, 16, sigma=0.0)


class TestKeypointFiles:
    def test_round_trip(self, tmp_path, rng):
        frames = np.zeros((4, N_JOINTS, 3))
        frames[:, :, :2] = rng.uniform(0, 100, size=(4, N_JOINTS, 2))
        frames[:, :, 2] = rng.uniform(size=(4, N_JOINTS))
        seq = PoseSequence(frames, fps=25.0)
        path = tmp_path / "kp.txt"
        save_keypoints(seq, path)
        loaded = load_keypoints(path, fps=25.0)
        assert np.allclose(loaded.frames, frames, atol=1e-6)
        line = path.read_text().splitlines()[0]
        assert len(line.split()) == N_JOINTS * 3

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "kp.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(ValueError):
            load_keypoints(path)
