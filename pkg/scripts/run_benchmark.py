#!/usr/bin/env python3
"""End-to-end synthetic benchmark: generate two sessions, train with 3-seed
restart, and print the per-DOF classification table for the held-out session.

Usage: python scripts/run_benchmark.py [--workdir runs/benchmark]
"""
import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from nervedecode.dataset import build_training_data, session_frames
from nervedecode.features import FeatureWindowSpec
from nervedecode.metrics import mean_balanced_accuracy
from nervedecode.network import ModelConfig
from nervedecode.synthgen import SessionSpec, generate_session, make_profile, save_session
from nervedecode.training import TrainConfig, evaluate_frames, multi_seed_train
from nervedecode.checkpoint import save_checkpoint_file

GESTURES = ("100000", "010000", "001000", "000100", "000010", "111110", "000001")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="runs/benchmark")
    parser.add_argument("--seeds", default="1,2,3")
    args = parser.parse_args()
    workdir = pathlib.Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    started = time.time()
    profile = make_profile()
    spec = SessionSpec(gestures=GESTURES, repetitions=10, hold_s=2.0, rest_s=1.5)
    train_session = generate_session(profile, spec, seed=301)
    val_session = generate_session(profile, spec, seed=302)
    save_session(train_session, workdir / "session_a")
    save_session(val_session, workdir / "session_b")
    print(f"generated 2 sessions of {train_session.recording.duration_s:.0f} s each")

    window = FeatureWindowSpec()
    data = build_training_data(session_frames(train_session, window),
                               session_frames(val_session, window))
    model_cfg = ModelConfig(input_rows=224, steps=50, conv_out=96, gru_hidden=96,
                            fc_hidden=48)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    params, summaries = multi_seed_train(data, TrainConfig(seeds=seeds), model_cfg)
    for s in summaries:
        print(f"  seed {s['seed']}: val mean balanced accuracy {s['val_mean_bal_acc']:.4f}")
    save_checkpoint_file(params, workdir / "model.ndm")

    metrics = evaluate_frames(params, data.x_val, data.y_val)
    print(f"\nselected seed {params.metadata['seed']} "
          f"({params.parameter_count} parameters)")
    print(f"{'DOF':<8} {'TPR %':>7} {'TNR %':>7} {'BalAcc %':>9}")
    for m in metrics:
        print(f"{m.name:<8} {100 * m.tpr:>7.1f} {100 * m.tnr:>7.1f} {100 * m.bal_acc:>9.2f}")
    print(f"mean balanced accuracy: {100 * mean_balanced_accuracy(metrics):.2f}% "
          f"({time.time() - started:.0f} s total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
