"""Sliding-window time-domain feature extraction and decoder input assembly.

14 features are computed per channel per window, in this fixed order:

    ZC    zero crossings: sign changes with |step| above eps_zc
    SSC   slope sign changes: (x[i]-x[i-1])*(x[i]-x[i+1]) >= eps_ssc
    WL    waveform length, sum |dx|
    WA    Wilson amplitude: count |dx| > wamp
    MAB   mean absolute amplitude
    MSQ   mean square
    RMS   sqrt(MSQ)
    V3    cube root of mean |x|^3
    LD    log detector, exp(mean ln(|x| + log_eps))
    DABS  sqrt(sum dx^2 / (n-1))
    MFL   log10(sqrt(sum dx^2) + log_eps); the additive guard keeps the
          value finite on constant windows
    MPR   myopulse percentage rate: fraction of |x| >= mpr
    MAVS  mean-absolute slope: MAB(second half) - MAB(first half)
    WMA   weighted mean absolute: center half weighted 1, outer quarters 0.5

The decoder input is a [channels*14 x steps] matrix whose columns are windows
ending step_ms apart, oldest first; channel-major row order (all 14 features
of channel 0, then channel 1, ...).

All reductions run along the last (contiguous) axis only, so computing a
window's features inside a block of 5 or a block of 5000 produces bit-for-bit
identical values; the streaming engine and the offline batch path share this
one kernel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NotReadyError

NUM_FEATURES = 14
FEATURE_NAMES = (
    "ZC", "SSC", "WL", "WA", "MAB", "MSQ", "RMS",
    "V3", "LD", "DABS", "MFL", "MPR", "MAVS", "WMA",
)


@dataclass(frozen=True)
class FeatureThresholds:
    """Comparison thresholds used by the count-type features.

    Defaults are chosen relative to the synthetic generator's unit-scale
    noise floor and are all configurable through the engine config file.
    """

    eps_zc: float = 0.0
    eps_ssc: float = 0.0
    wamp: float = 0.05
    mpr: float = 0.05
    log_eps: float = 1e-12

    def as_dict(self) -> dict:
        return {
            "eps_zc": self.eps_zc, "eps_ssc": self.eps_ssc,
            "wamp": self.wamp, "mpr": self.mpr, "log_eps": self.log_eps,
        }


@dataclass(frozen=True)
class FeatureWindowSpec:
    """Window geometry for the sliding extraction.

    history_s must be an integer multiple of the step so the tensor has a
    whole number of columns; the default 1 s / 20 ms gives 50 steps. Each
    window reaches window_ms further back, so a full frame needs
    history_s + window_ms/1000 seconds of buffered samples (1.1 s at
    defaults).
    """

    window_ms: float = 100.0
    step_ms: float = 20.0
    history_s: float = 1.0

    def __post_init__(self):
        if self.window_ms <= 0 or self.step_ms <= 0 or self.history_s <= 0:
            raise ConfigError("window_ms, step_ms, history_s must all be positive")
        steps = self.history_s * 1000.0 / self.step_ms
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"history_s/step_ms must be an integer step count, got {steps}")

    @property
    def steps(self) -> int:
        return int(round(self.history_s * 1000.0 / self.step_ms))

    def window_samples(self, sample_rate_hz: float) -> int:
        n = self.window_ms * sample_rate_hz / 1000.0
        if abs(n - round(n)) > 1e-9 or round(n) < 4:
            raise ConfigError(f"window_ms={self.window_ms} at fs={sample_rate_hz} "
                              f"gives a non-integral or too-short window ({n})")
        return int(round(n))

    def step_samples(self, sample_rate_hz: float) -> int:
        n = self.step_ms * sample_rate_hz / 1000.0
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"step_ms={self.step_ms} is not a whole number of samples "
                              f"at fs={sample_rate_hz}")
        return int(round(n))

    def min_history_samples(self, sample_rate_hz: float) -> int:
        return (self.steps - 1) * self.step_samples(sample_rate_hz) + self.window_samples(sample_rate_hz)


@dataclass(frozen=True)
class FeatureTensor:
    """Decoder input: values is [channels*14 x steps], float64.

    Column t is the window ending at end_timestamp_s - (steps-1-t)*step.
    """

    values: np.ndarray
    channels: int
    steps: int
    end_timestamp_s: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.channels * NUM_FEATURES, self.steps):
            raise ConfigError(
                f"tensor shape {v.shape} != [{self.channels * NUM_FEATURES} x {self.steps}]")

    @property
    def rows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-row z-score statistics, computed on training data only.

    Rows with zero variance get their std clamped to 1 so normalization
    stays defined.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        if m.shape != s.shape or m.ndim != 1:
            raise ConfigError(f"mean/std must be matching vectors, got {m.shape} vs {s.shape}")
        if np.any(s <= 0):
            raise ConfigError("NormStats std must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def rows(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def identity(rows: int) -> "NormStats":
        return NormStats(np.zeros(rows), np.ones(rows))


def _feature_block(x: np.ndarray, thr: FeatureThresholds) -> np.ndarray:
    """Feature kernel over the last axis: [..., n] float64 -> [..., 14].

    Every reduction is per-row over the contiguous last axis, which keeps the
    result independent of how many windows share the call.
    """
    n = x.shape[-1]
    abs_x = np.abs(x)
    dx = np.diff(x, axis=-1)
    abs_dx = np.abs(dx)

    zc = np.count_nonzero((x[..., :-1] * x[..., 1:] < 0.0) & (abs_dx >= thr.eps_zc),
                          axis=-1).astype(np.float64)
    # (x[i]-x[i-1])*(x[i]-x[i+1]) over interior points equals -dx[i-1]*dx[i]
    ssc = np.count_nonzero(-dx[..., :-1] * dx[..., 1:] >= thr.eps_ssc,
                           axis=-1).astype(np.float64)
    wl = np.sum(abs_dx, axis=-1)
    wa = np.count_nonzero(abs_dx > thr.wamp, axis=-1).astype(np.float64)
    mab = np.mean(abs_x, axis=-1)
    msq = np.mean(np.square(x), axis=-1)
    rms = np.sqrt(msq)
    v3 = np.cbrt(np.mean(abs_x ** 3, axis=-1))
    ld = np.exp(np.mean(np.log(abs_x + thr.log_eps), axis=-1))
    sum_dx2 = np.sum(np.square(dx), axis=-1)
    dabs = np.sqrt(sum_dx2 / (n - 1))
    mfl = np.log10(np.sqrt(sum_dx2) + thr.log_eps)
    mpr = np.count_nonzero(abs_x >= thr.mpr, axis=-1) / n
    half = n // 2
    mavs = np.mean(abs_x[..., half:], axis=-1) - np.mean(abs_x[..., :half], axis=-1)
    idx = np.arange(n, dtype=np.float64)
    weights = np.where((idx >= 0.25 * n) & (idx < 0.75 * n), 1.0, 0.5)
    wma = np.sum(abs_x * weights, axis=-1) / n

    return np.stack([zc, ssc, wl, wa, mab, msq, rms, v3, ld, dabs, mfl, mpr, mavs, wma],
                    axis=-1)


def extract_features(window: np.ndarray, thresholds: FeatureThresholds = FeatureThresholds()) -> np.ndarray:
    """Features of a single-channel window; returns a length-14 float vector."""
    w = np.ascontiguousarray(window, dtype=np.float64)
    if w.ndim != 1:
        raise DataError(f"expected a 1-D window, got shape {w.shape}")
    if w.size < 4:
        raise DataError(f"window too short: {w.size} samples (need >= 4)")
    if not np.all(np.isfinite(w)):
        raise DataError("window contains non-finite samples")
    return _feature_block(w, thresholds)


def window_features(samples: np.ndarray, end_indices: np.ndarray, window_samples: int,
                    thresholds: FeatureThresholds) -> np.ndarray:
    """Features for many windows of a multichannel signal in one kernel call.

    samples: [channels x n]; each window k covers samples
    [end_indices[k]-window_samples, end_indices[k]). Returns
    [channels x len(end_indices) x 14].
    """
    samples = np.asarray(samples)
    ends = np.asarray(end_indices, dtype=np.int64)
    if samples.ndim != 2:
        raise DataError(f"samples must be [channels x n], got {samples.shape}")
    if ends.size and (ends.min() < window_samples or ends.max() > samples.shape[1]):
        raise NotReadyError(
            f"window ends {ends.min()}..{ends.max()} out of range for {samples.shape[1]} samples")
    if ends.size == 0:
        return np.empty((samples.shape[0], 0, NUM_FEATURES))
    x = np.ascontiguousarray(samples, dtype=np.float64)
    starts = ends - window_samples
    if ends.size > 1:
        step = int(starts[1] - starts[0])
        if step > 0 and np.all(np.diff(starts) == step):
            # Evenly spaced windows: strided view avoids copying the overlap.
            view = np.lib.stride_tricks.as_strided(
                x[:, starts[0]:],
                shape=(x.shape[0], ends.size, window_samples),
                strides=(x.strides[0], step * x.strides[1], x.strides[1]),
                writeable=False,
            )
            return _feature_block(view, thresholds)
    stacked = np.stack([x[:, s:s + window_samples] for s in starts], axis=1)
    return _feature_block(stacked, thresholds)


def build_feature_tensor(history: np.ndarray, spec: FeatureWindowSpec,
                         thresholds: FeatureThresholds = FeatureThresholds(),
                         sample_rate_hz: float = 5000.0,
                         end_timestamp_s: float = 0.0) -> FeatureTensor:
    """Assemble the decoder input from the most recent samples of each channel.

    `history` is [channels x n] with the newest sample last; the last column
    of the tensor is the window ending now. Raises NotReadyError when fewer
    than history_s + window_ms of samples are available, which the engine
    treats as "skip this frame".
    """
    hist = np.asarray(history)
    if hist.ndim != 2:
        raise DataError(f"history must be [channels x n], got {hist.shape}")
    need = spec.min_history_samples(sample_rate_hz)
    if hist.shape[1] < need:
        raise NotReadyError(f"need {need} samples per channel, have {hist.shape[1]}")
    win = spec.window_samples(sample_rate_hz)
    step = spec.step_samples(sample_rate_hz)
    steps = spec.steps
    n = hist.shape[1]
    ends = n - step * np.arange(steps - 1, -1, -1, dtype=np.int64)
    feats = window_features(hist, ends, win, thresholds)      # [C, T, 14]
    values = feats.transpose(0, 2, 1).reshape(hist.shape[0] * NUM_FEATURES, steps)
    return FeatureTensor(np.ascontiguousarray(values), hist.shape[0], steps, end_timestamp_s)


def normalize(tensor: FeatureTensor, stats: NormStats) -> FeatureTensor:
    """Row-wise z-score: out[r, t] = (in[r, t] - mean[r]) / std[r]."""
    if stats.rows != tensor.rows:
        raise ConfigError(f"stats rows {stats.rows} != tensor rows {tensor.rows}")
    values = (tensor.values - stats.mean[:, None]) / stats.std[:, None]
    return FeatureTensor(values, tensor.channels, tensor.steps, tensor.end_timestamp_s)


def normalize_rows(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Array-level normalize for [rows x T] or [N x rows x T] stacks."""
    if values.shape[-2] != stats.rows:
        raise ConfigError(f"stats rows {stats.rows} != value rows {values.shape[-2]}")
    return (values - stats.mean[:, None]) / stats.std[:, None]


def fit_norm_stats(tensors) -> NormStats:
    """Per-row mean/std over a collection of tensors (all columns pooled).

    Two-pass computation; zero-variance rows clamp std to 1.
    """
    mats = [t.values if isinstance(t, FeatureTensor) else np.asarray(t, dtype=np.float64)
            for t in tensors]
    if not mats:
        raise ConfigError("fit_norm_stats needs at least one tensor")
    rows = mats[0].shape[0]
    if any(m.shape[0] != rows for m in mats):
        raise ConfigError("all tensors must share the same row count")
    total = sum(m.shape[1] for m in mats)
    mean = sum(np.sum(m, axis=1) for m in mats) / total
    var = sum(np.sum(np.square(m - mean[:, None]), axis=1) for m in mats) / total
    std = np.sqrt(var)
    std[std <= 0.0] = 1.0
    return NormStats(mean, std)
