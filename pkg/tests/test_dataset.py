import numpy as np
import pytest
from numpy.testing import assert_array_equal

from nervedecode.dataset import (
    build_training_data, concat_frames, fit_norm_stats_stack, session_frames, split_frames,
)
from nervedecode.errors import ConfigError
from nervedecode.features import NUM_FEATURES, FeatureWindowSpec, fit_norm_stats
from nervedecode.gestures import gesture_to_bits


class TestSessionFrames:
    def test_shapes_and_grid(self, tiny_sessions, tiny_window):
        frames = session_frames(tiny_sessions[0], tiny_window, frame_rate_hz=50.0)
        assert frames.x.shape[1:] == (4 * NUM_FEATURES, tiny_window.steps)
        assert frames.x.dtype == np.float32
        assert frames.y.shape == (frames.x.shape[0], 6)
        # ticks every 20 ms from the first grid point with 0.58 s of history
        assert frames.t_ms[0] == 580
        assert np.all(np.diff(frames.t_ms) == 20)

    def test_labels_align_with_schedule(self, tiny_sessions, tiny_window):
        session = tiny_sessions[0]
        frames = session_frames(session, tiny_window, frame_rate_hz=50.0)
        label_by_ms = dict(zip(session.label_times_ms.tolist(), session.labels))
        for i in range(0, frames.x.shape[0], 37):
            t = int(frames.t_ms[i])
            want = label_by_ms[min(t, session.label_times_ms[-1])]
            assert_array_equal(frames.y[i], gesture_to_bits(want).astype(np.float64))

    def test_frame_tensor_matches_direct_extraction(self, tiny_sessions, tiny_window):
        """A frame assembled from the cached window grid equals the tensor
        built directly from the filtered history (shared kernel, bit-exact)."""
        from nervedecode.features import build_feature_tensor
        from nervedecode.sigproc import bandpass_filter_array

        session = tiny_sessions[0]
        frames = session_frames(session, tiny_window, frame_rate_hz=50.0)
        filtered = bandpass_filter_array(
            session.recording.samples.astype(np.float64), 10000)[:, ::2]
        idx = 13
        end = int(frames.t_ms[idx]) * 5  # ms -> samples at 5 kHz
        tensor = build_feature_tensor(filtered[:, :end], tiny_window)
        assert_array_equal(frames.x[idx], tensor.values.astype(np.float32))

    def test_off_grid_frame_rate_rejected(self, tiny_sessions, tiny_window):
        with pytest.raises(ConfigError):
            session_frames(tiny_sessions[0], tiny_window, frame_rate_hz=30.0)

    def test_too_short_session_rejected(self, tiny_profile, tiny_window):
        from nervedecode.synthgen import SessionSpec, generate_session

        spec = SessionSpec(gestures=("100000",), repetitions=1, hold_s=0.2, rest_s=0.2)
        session = generate_session(tiny_profile, spec, seed=1)
        with pytest.raises(ConfigError):
            session_frames(session, tiny_window)


class TestSplitsAndStats:
    def test_split_is_chronological(self, tiny_sessions, tiny_window):
        frames = session_frames(tiny_sessions[0], tiny_window)
        head, tail = split_frames(frames, 0.25)
        assert head.x.shape[0] + tail.x.shape[0] == frames.x.shape[0]
        assert head.t_ms[-1] < tail.t_ms[0]

    def test_bad_split_fraction(self, tiny_sessions, tiny_window):
        frames = session_frames(tiny_sessions[0], tiny_window)
        with pytest.raises(ConfigError):
            split_frames(frames, 1.5)

    def test_concat_requires_matching_geometry(self, tiny_sessions, tiny_window):
        frames = session_frames(tiny_sessions[0], tiny_window)
        other = session_frames(tiny_sessions[1], FeatureWindowSpec(history_s=0.6))
        with pytest.raises(ConfigError):
            concat_frames([frames, other])

    def test_stack_stats_match_public_op(self, tiny_sessions, tiny_window):
        frames = session_frames(tiny_sessions[0], tiny_window, frame_rate_hz=12.5)
        stats_stack = fit_norm_stats_stack(frames.x[:40])
        stats_list = fit_norm_stats([frames.x[i].astype(np.float64) for i in range(40)])
        np.testing.assert_allclose(stats_stack.mean, stats_list.mean, rtol=1e-9)
        np.testing.assert_allclose(stats_stack.std, stats_list.std, rtol=1e-9)

    def test_training_data_is_z_scored(self, tiny_training_data):
        x = tiny_training_data.x_train
        means = x.mean(axis=(0, 2))
        stds = x.std(axis=(0, 2))
        live = stds > 1e-6  # rows with any variance at all
        assert np.all(np.abs(means[live]) < 1e-3)
        assert np.all(np.abs(stds[live] - 1.0) < 1e-3)
