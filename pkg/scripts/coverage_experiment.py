#!/usr/bin/env python3
"""Empirical false-alarm rates of the calibrated detectors vs the budget.

Calibrates the constant and band schemes on M successful in-distribution
rollouts, then measures how often each detector (observation, action, and
the AND combination) flags a fresh successful rollout, across a grid of
delta budgets. The conformal schemes should stay at or below delta; the
time-varying scheme carries no such promise and is included for contrast.
"""
from __future__ import annotations

import argparse

import numpy as np

from failpred import (
    ScenarioConfig,
    TrainConfig,
    combine,
    cp_band,
    cp_constant,
    fit_ace_ranges,
    generate_dataset,
    init_rnd,
    score_rollout,
    threshold_decide,
    time_varying,
    train_rnd,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--m", type=int, default=100, help="calibration rollouts")
    parser.add_argument("--fresh", type=int, default=1000, help="held-out success rollouts")
    parser.add_argument("--window", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = ScenarioConfig(
        embed_dim=4,
        batch=12,
        chunk_len=2,
        action_dim=2,
        stride=4,
        max_len=40,
        seed=args.seed,
    )
    train_set = generate_dataset(cfg, {"success_id": 60}, seed=args.seed + 1)
    calib = generate_dataset(cfg, {"success_id": args.m}, seed=args.seed + 2)
    fresh = generate_dataset(cfg, {"success_id": args.fresh}, seed=args.seed + 3)

    embeddings = np.concatenate([[s.embedding for s in r.steps] for r in train_set])
    model = init_rnd(cfg.embed_dim, out_dim=16, seed=args.seed, width_scale=0.0625)
    model, _ = train_rnd(model, embeddings, TrainConfig(epochs=60, seed=args.seed))
    ace_cfg = fit_ace_ranges(calib, alpha=0.05)

    w = args.window
    calib_series = [score_rollout(r, model, ace_cfg, w, w) for r in calib]
    fresh_series = [score_rollout(r, model, ace_cfg, w, w) for r in fresh]

    print(f"M={args.m} fresh={args.fresh} window={w}")
    print(f"{'scheme':14s} {'delta':>6s} {'F_obs':>7s} {'F_act':>7s} {'AND':>7s}")
    for delta in (0.01, 0.02, 0.05, 0.1, 0.2):
        for scheme in ("constant", "band", "tvar-gaussian"):
            if scheme == "constant":
                po = cp_constant([s[0] for s in calib_series], delta, horizon=cfg.max_len)
                pa = cp_constant([s[1] for s in calib_series], delta, horizon=cfg.max_len)
            elif scheme == "band":
                po = cp_band([s[0] for s in calib_series], delta, horizon=cfg.max_len)
                pa = cp_band([s[1] for s in calib_series], delta, horizon=cfg.max_len)
            else:
                po = time_varying([s[0] for s in calib_series], delta, horizon=cfg.max_len)
                pa = time_varying([s[1] for s in calib_series], delta, horizon=cfg.max_len)
            n_obs = n_act = n_and = 0
            for obs, act in fresh_series:
                res_obs = threshold_decide(obs, po)
                res_act = threshold_decide(act, pa)
                n_obs += res_obs.flagged
                n_act += res_act.flagged
                n_and += combine(res_obs, res_act, "and").flagged
            n = len(fresh_series)
            print(
                f"{scheme:14s} {delta:6.2f} {n_obs / n:7.3f} {n_act / n:7.3f} {n_and / n:7.3f}"
            )


if __name__ == "__main__":
    main()
