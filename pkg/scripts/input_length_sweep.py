#!/usr/bin/env python3
"""Prediction error and per-frame latency as a function of the history length
the decoder consumes (0.2 s .. 2 s at a fixed prediction rate).

Usage: python scripts/input_length_sweep.py [--lengths 0.2,0.5,1.0,2.0]
"""
import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from nervedecode.dataset import build_training_data, session_frames
from nervedecode.engine import EngineConfig, run_pipeline
from nervedecode.features import FeatureWindowSpec
from nervedecode.metrics import mean_balanced_accuracy
from nervedecode.network import ModelConfig
from nervedecode.synthgen import SessionSpec, generate_session, make_profile
from nervedecode.training import TrainConfig, evaluate_frames, train

GESTURES = ("100000", "010000", "001000", "000100", "000010", "111110", "000001")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--lengths", default="0.2,0.5,1.0,2.0")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    profile = make_profile()
    spec = SessionSpec(gestures=GESTURES, repetitions=10, hold_s=2.0, rest_s=1.5)
    train_session = generate_session(profile, spec, seed=301)
    val_session = generate_session(profile, spec, seed=302)
    probe = val_session.recording

    print(f"{'history s':>9} {'err %':>7} {'decode p50 us':>14} {'decode p95 us':>14} "
          f"{'feature p95 us':>15}")
    for length in (float(x) for x in args.lengths.split(",")):
        window = FeatureWindowSpec(history_s=length)
        data = build_training_data(session_frames(train_session, window),
                                   session_frames(val_session, window))
        model_cfg = ModelConfig(input_rows=224, steps=window.steps, conv_out=96,
                                gru_hidden=96, fc_hidden=48)
        params, _ = train(data, TrainConfig(), seed=args.seed, model_cfg=model_cfg)
        err = 1.0 - mean_balanced_accuracy(evaluate_frames(params, data.x_val, data.y_val))

        short = type(probe)(probe.sample_rate_hz, probe.samples[:, :200_000].copy())
        _, rep = run_pipeline(short, params, EngineConfig.for_params(params))
        print(f"{length:>9.1f} {100 * err:>7.2f} "
              f"{rep.percentile('decode_us', 50):>14.0f} "
              f"{rep.percentile('decode_us', 95):>14.0f} "
              f"{rep.percentile('feature_us', 95):>15.0f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
