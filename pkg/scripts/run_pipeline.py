#!/usr/bin/env python3
"""End-to-end demo: simulate, train, calibrate, monitor, evaluate.

Writes every artifact into --workdir and prints the per-stage summaries the
CLI emits. Equivalent to running the five subcommands by hand; see
``failpred --help``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from failpred.cli import main as failpred_main

CONFIG_TEMPLATE = """\
[run]
schema_version = 1
seed = {seed}

[scenario]
embed_dim = 3
batch = 24
chunk_len = 4
action_dim = 2
stride = 1
max_len = 40
n_modes = 2
mode_separation = 4.0
base_noise = 0.1
embed_drift = 0.5
entropy_inflation = 6.0
failure_onset_fraction = 0.5

[counts]
success_id = 60
fail_id = 30
fail_ood = 10
"""


def run(argv: list[str]) -> None:
    print("+ failpred " + " ".join(argv))
    code = failpred_main(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("pipeline-out"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=120)
    parser.add_argument("--width-scale", type=float, default=0.125)
    args = parser.parse_args()

    work = args.workdir
    work.mkdir(parents=True, exist_ok=True)
    config = work / "run.ini"
    config.write_text(CONFIG_TEMPLATE.format(seed=args.seed))
    traces = work / "traces.jsonl"
    calib_traces = work / "calib.jsonl"
    ckpt = work / "model.ckpt"
    profiles = work / "profiles.json"
    monitor_out = work / "monitor.jsonl"
    report = work / "report.csv"

    run(["simulate", "--config", str(config), "--out", str(calib_traces)])
    run(["simulate", "--config", str(config), "--seed", str(args.seed + 1), "--out", str(traces)])
    run(
        [
            "train-rnd",
            "--traces", str(calib_traces),
            "--out", str(ckpt),
            "--width-scale", str(args.width_scale),
            "--m", "32",
            "--seed", str(args.seed),
            "--epochs", str(args.epochs),
        ]
    )
    run(
        [
            "calibrate",
            "--traces", str(calib_traces),
            "--rnd", str(ckpt),
            "--scheme", "band",
            "--delta", "0.1",
            "--w-obs", "10",
            "--w-act", "10",
            "--out", str(profiles),
        ]
    )
    run(
        [
            "monitor",
            "--traces", str(traces),
            "--rnd", str(ckpt),
            "--profile-obs", str(profiles),
            "--profile-act", str(profiles),
            "--mode", "and",
            "--out", str(monitor_out),
        ]
    )
    run(
        [
            "evaluate",
            "--traces", str(traces),
            "--calib", str(calib_traces),
            "--rnd", str(ckpt),
            "--schemes", "constant,band,tvar",
            "--w", "1..50",
            "--mode", "and",
            "--out", str(report),
        ]
    )
    print(f"artifacts in {work}/")


if __name__ == "__main__":
    main()
