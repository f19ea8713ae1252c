import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from nervedecode.errors import ConfigError, DataError, NotReadyError
from nervedecode.features import (
    FEATURE_NAMES, NUM_FEATURES, FeatureThresholds, FeatureTensor, FeatureWindowSpec,
    NormStats, build_feature_tensor, extract_features, fit_norm_stats, normalize,
    window_features,
)

from oracles import brute_features, two_pass_stats

THR = FeatureThresholds()
IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class TestExtractFeatures:
    def test_alternating_signs_zero_crossings(self):
        out = extract_features(np.array([1.0, -1.0, 1.0, -1.0]), THR)
        assert out[IDX["ZC"]] == 3

    def test_constant_window(self):
        out = extract_features(np.full(500, -2.5), THR)
        assert out[IDX["WL"]] == 0.0
        assert out[IDX["MAB"]] == pytest.approx(2.5, rel=1e-15)
        assert out[IDX["RMS"]] == pytest.approx(2.5, rel=1e-15)
        assert out[IDX["DABS"]] == 0.0
        assert out[IDX["MAVS"]] == 0.0
        assert np.all(np.isfinite(out)), "every feature stays finite on a constant window"

    def test_seeded_window_matches_brute_force(self):
        rng = np.random.default_rng(42)
        window = rng.uniform(-1.0, 1.0, size=500)
        got = extract_features(window, THR)
        want = brute_features(window, THR)
        assert_allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_too_short_window_rejected(self):
        with pytest.raises(DataError):
            extract_features(np.array([1.0, 2.0, 3.0]), THR)

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            extract_features(np.array([1.0, np.nan, 0.5, 0.1]), THR)

    @given(st.integers(0, 2**32 - 1), st.floats(0.25, 8.0))
    def test_scale_equivariance(self, seed, amp):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=200)
        base = extract_features(x, THR)
        scaled_thr = FeatureThresholds(wamp=THR.wamp * amp, mpr=THR.mpr * amp)
        scaled = extract_features(amp * x, scaled_thr)
        for name in ("WL", "MAB", "RMS", "DABS"):
            assert scaled[IDX[name]] == pytest.approx(amp * base[IDX[name]], rel=1e-9)
        assert scaled[IDX["MSQ"]] == pytest.approx(amp * amp * base[IDX["MSQ"]], rel=1e-9)
        for name in ("ZC", "SSC", "MPR"):
            assert scaled[IDX[name]] == pytest.approx(base[IDX[name]], abs=0)

    @given(st.integers(0, 2**32 - 1))
    def test_rms_squared_equals_msq(self, seed):
        x = np.random.default_rng(seed).normal(size=300)
        out = extract_features(x, THR)
        assert out[IDX["RMS"]] ** 2 == pytest.approx(out[IDX["MSQ"]], rel=1e-12)

    def test_counts_are_integers(self):
        x = np.random.default_rng(1).normal(size=500)
        out = extract_features(x, THR)
        for name in ("ZC", "SSC", "WA"):
            assert out[IDX[name]] == int(out[IDX[name]])
            assert out[IDX[name]] >= 0


class TestWindowFeatures:
    def test_block_size_does_not_change_values(self):
        """One window computed alone is bit-identical to the same window
        inside a large strided batch (kernel shared by stream and batch)."""
        rng = np.random.default_rng(7)
        samples = np.ascontiguousarray(rng.normal(size=(3, 3000)))
        ends_all = np.arange(500, 3001, 100, dtype=np.int64)
        batch = window_features(samples, ends_all, 500, THR)
        for k, end in enumerate(ends_all[::5]):
            single = window_features(samples, np.array([end]), 500, THR)
            assert_array_equal(single[:, 0, :], batch[:, 5 * k, :])
        # small streamed groups too
        grp = window_features(samples, ends_all[3:8], 500, THR)
        assert_array_equal(grp, batch[:, 3:8, :])

    def test_out_of_range_end_raises(self):
        samples = np.zeros((1, 600))
        with pytest.raises(NotReadyError):
            window_features(samples, np.array([601]), 500, THR)
        with pytest.raises(NotReadyError):
            window_features(samples, np.array([499]), 500, THR)


class TestFeatureTensor:
    def test_shape_16_channels(self):
        hist = np.random.default_rng(0).normal(size=(16, 5500))
        tensor = build_feature_tensor(hist, FeatureWindowSpec(), THR)
        assert tensor.values.shape == (224, 50)
        assert tensor.channels == 16

    def test_shape_8_channels(self):
        hist = np.random.default_rng(0).normal(size=(8, 5500))
        tensor = build_feature_tensor(hist, FeatureWindowSpec(), THR)
        assert tensor.values.shape == (112, 50)

    def test_column_shift_between_consecutive_frames(self):
        rng = np.random.default_rng(3)
        stream = rng.normal(size=(2, 5600))
        spec = FeatureWindowSpec()
        first = build_feature_tensor(stream[:, :5500], spec, THR)
        second = build_feature_tensor(stream[:, 100:5600], spec, THR)
        assert_array_equal(second.values[:, :49], first.values[:, 1:])

    def test_insufficient_history_not_ready(self):
        with pytest.raises(NotReadyError):
            build_feature_tensor(np.zeros((2, 5399)), FeatureWindowSpec(), THR)

    def test_row_order_is_channel_major(self):
        rng = np.random.default_rng(5)
        hist = rng.normal(size=(2, 5500))
        tensor = build_feature_tensor(hist, FeatureWindowSpec(), THR)
        last_window_ch1 = extract_features(hist[1, -500:], THR)
        assert_allclose(tensor.values[NUM_FEATURES:, -1], last_window_ch1, rtol=1e-12)

    def test_steps_must_divide_history(self):
        with pytest.raises(ConfigError):
            FeatureWindowSpec(window_ms=100.0, step_ms=30.0, history_s=1.0)


class TestNormalize:
    def _tensor(self, values):
        rows, steps = values.shape
        return FeatureTensor(values, rows // NUM_FEATURES, steps, 0.0)

    def test_identity_stats(self):
        vals = np.random.default_rng(0).normal(size=(NUM_FEATURES, 5))
        tensor = self._tensor(vals)
        out = normalize(tensor, NormStats.identity(NUM_FEATURES))
        assert_array_equal(out.values, vals)

    def test_tensor_equal_to_means_gives_zeros(self):
        means = np.random.default_rng(1).normal(size=NUM_FEATURES)
        vals = np.repeat(means[:, None], 4, axis=1)
        out = normalize(self._tensor(vals), NormStats(means, np.ones(NUM_FEATURES)))
        assert_array_equal(out.values, np.zeros_like(vals))

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(size=(NUM_FEATURES, 7))
        mean = rng.normal(size=NUM_FEATURES)
        std = rng.uniform(0.5, 2.0, size=NUM_FEATURES)
        out = normalize(self._tensor(vals), NormStats(mean, std))
        expect = np.empty_like(vals)
        for r in range(vals.shape[0]):
            for t in range(vals.shape[1]):
                expect[r, t] = (vals[r, t] - mean[r]) / std[r]
        assert_allclose(out.values, expect, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            normalize(self._tensor(np.zeros((NUM_FEATURES, 3))), NormStats.identity(7))


class TestFitNormStats:
    def test_single_constant_tensor(self):
        stats = fit_norm_stats([np.full((3, 10), 4.0)])
        assert_allclose(stats.mean, [4.0, 4.0, 4.0])
        assert_array_equal(stats.std, [1.0, 1.0, 1.0])  # zero variance clamps to 1

    def test_two_tensor_mean(self):
        stats = fit_norm_stats([np.zeros((2, 5)), np.full((2, 5), 2.0)])
        assert_allclose(stats.mean, [1.0, 1.0])

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(6)
        mats = [rng.normal(size=(4, 11)), rng.normal(size=(4, 7)), rng.normal(size=(4, 23))]
        stats = fit_norm_stats(mats)
        means, stds = two_pass_stats([m.tolist() for m in mats])
        assert_allclose(stats.mean, means, rtol=1e-10)
        assert_allclose(stats.std, stds, rtol=1e-10)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            fit_norm_stats([])
