#!/usr/bin/env python3
"""Gesture matching task study: success rate, reaction-time distribution, and
information throughput for a trained checkpoint (trains one first if needed).

Usage: python scripts/reaction_time_study.py [--model runs/benchmark/model.ndm]
"""
import argparse
import pathlib
import subprocess
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from nervedecode.checkpoint import load_checkpoint_file
from nervedecode.chronometry import (
    MatchingTaskConfig, SimulatedSubject, kde_density, reaction_stats,
    run_matching_session, write_density_curve, write_trial_log,
)
from nervedecode.synthgen import make_profile


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--model", default="runs/benchmark/model.ndm")
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--out", default="runs/matching")
    args = parser.parse_args()

    model_path = pathlib.Path(args.model)
    if not model_path.exists():
        print(f"{model_path} missing; running the benchmark first")
        subprocess.check_call([sys.executable,
                               str(pathlib.Path(__file__).parent / "run_benchmark.py"),
                               "--workdir", str(model_path.parent)])
    params = load_checkpoint_file(model_path)

    subject = SimulatedSubject(profile=make_profile())
    cfg = MatchingTaskConfig(trials=args.trials)
    results = run_matching_session(params, subject, cfg, seed=args.seed)
    stats = reaction_stats(results, cfg)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trial_log(results, out / "trials.jsonl")
    rts = [r.reaction_time_s for r in results if r.success]
    write_density_curve(kde_density(rts, grid_lo=0.0, grid_hi=cfg.cutoff_s),
                        out / "rt_density.txt")

    print(f"{'gesture':<8} {'trials':>7} {'success %':>10} {'median RT s':>12}")
    for g, slot in sorted(stats["per_gesture"].items()):
        rt = f"{slot['median_rt_s']:.2f}" if slot["median_rt_s"] is not None else "--"
        print(f"{g:<8} {slot['trials']:>7} {100 * slot['success_rate']:>10.1f} {rt:>12}")
    print(f"{'all':<8} {stats['trials']:>7} {100 * stats['success_rate']:>10.1f} "
          f"{stats['median_rt_s']:>12.2f}")
    tp = stats["throughput"]
    print(f"\ninfo/trial {stats['info_per_trial_bits']:.1f} bits -> "
          f"{tp['bps']:.2f} bps ({tp['bpm']:.1f} bpm)")
    print(f"machine terms: feature {stats['mean_feature_us']:.0f} us, "
          f"decode {stats['mean_decode_us']:.0f} us per frame")
    return 0


if __name__ == "__main__":
    sys.exit(main())
