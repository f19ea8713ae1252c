#!/usr/bin/env python3
"""Model persistence under signal drift: evaluate a fixed decoder on sessions
drifted by 0..70 days, then retrain on the drifted data and re-evaluate.

Usage: python scripts/persistence_study.py [--model runs/benchmark/model.ndm]
"""
import argparse
import pathlib
import subprocess
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from nervedecode.checkpoint import load_checkpoint_file
from nervedecode.chronometry import cross_session_eval
from nervedecode.dataset import build_training_data, session_frames
from nervedecode.metrics import mean_balanced_accuracy
from nervedecode.network import ModelConfig
from nervedecode.synthgen import DriftSpec, SessionSpec, apply_drift, generate_session, make_profile
from nervedecode.training import TrainConfig, evaluate_frames, train

GESTURES = ("100000", "010000", "001000", "000100", "000010", "111110", "000001")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", default="runs/benchmark/model.ndm")
    parser.add_argument("--days", default="0,23,46,70")
    args = parser.parse_args()

    model_path = pathlib.Path(args.model)
    if not model_path.exists():
        print(f"{model_path} missing; running the benchmark first")
        subprocess.check_call([sys.executable,
                               str(pathlib.Path(__file__).parent / "run_benchmark.py"),
                               "--workdir", str(model_path.parent)])
    params = load_checkpoint_file(model_path)

    profile = make_profile()
    drift = DriftSpec()
    eval_spec = SessionSpec(gestures=GESTURES, repetitions=4, hold_s=2.0, rest_s=1.5,
                            session_id="drift-eval")
    days = [int(d) for d in args.days.split(",")]
    print("held model, drifting signal:")
    baseline = None
    for day in days:
        session = generate_session(apply_drift(profile, drift, day), eval_spec, seed=500)
        rep = cross_session_eval([], session, reuse_params=params)
        if baseline is None:
            baseline = rep.mean_pred_error
        print(f"  day {day:3d}: mean prediction error {100 * rep.mean_pred_error:.2f}%")

    last = days[-1]
    print(f"\nretraining on day-{last} data:")
    profile_d = apply_drift(profile, drift, last)
    train_spec = SessionSpec(gestures=GESTURES, repetitions=8, hold_s=2.0, rest_s=1.5,
                             session_id="drift-retrain")
    data = build_training_data(
        session_frames(generate_session(profile_d, train_spec, seed=701), params.window),
        session_frames(generate_session(profile_d, eval_spec, seed=702), params.window))
    model_cfg = ModelConfig(**params.config.as_dict())
    retrained, _ = train(data, TrainConfig(), seed=1, model_cfg=model_cfg)
    err = 1.0 - mean_balanced_accuracy(evaluate_frames(retrained, data.x_val, data.y_val))
    print(f"  day {last:3d} after retrain: {100 * err:.2f}% "
          f"(day-0 baseline {100 * baseline:.2f}%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
