"""Command-line pipeline: simulate, train-rnd, calibrate, monitor, evaluate.

One binary with subcommands so the whole pipeline shares a config format and
deterministic seed threading. The ``FAILPRED_SEED`` environment variable
overrides the effective seed of any stage; every output file embeds tool
version, seed, and a config hash, so it can be re-derived.

Config files are INI-style key-value text::

    [run]
    schema_version = 1
    seed = 7

    [scenario]
    embed_dim = 16
    ...          ; any ScenarioConfig field

    [counts]
    success_id = 100
    fail_id = 50

Errors leave a machine-readable JSON record on stderr and a nonzero exit.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ace, aggregate, calibrate, detect, evaluate, rnd, synth, trace
from .util import TOOL_VERSION, config_hash

CONFIG_SCHEMA_VERSION = 1
SEED_ENV_VAR = "FAILPRED_SEED"


class CliError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    """Parsed pipeline config: global seed plus per-stage sections."""

    schema_version: int = CONFIG_SCHEMA_VERSION
    seed: int = 0
    scenario: synth.ScenarioConfig | None = None
    counts: dict[str, int] = dataclasses.field(default_factory=dict)
    # a [scenario] seed key pins the scenario seed even when the run seed
    # is overridden
    scenario_seed_explicit: bool = False


def _coerce_fields(cls, section: configparser.SectionProxy) -> dict:
    casts = {"int": int, "float": float, "str": str}
    out = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in section.items():
        if key not in fields:
            raise CliError(f"unknown key {key!r} in [{section.name}]")
        cast = casts.get(str(fields[key].type), str)
        try:
            out[key] = cast(value)
        except ValueError as exc:
            raise CliError(f"bad value for {key!r} in [{section.name}]: {exc}") from exc
    return out


def load_run_config(path: str | Path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise CliError(f"config file not found: {path}")
    cfg = RunConfig()
    if parser.has_section("run"):
        run = parser["run"]
        cfg.schema_version = run.getint("schema_version", CONFIG_SCHEMA_VERSION)
        cfg.seed = run.getint("seed", 0)
    if cfg.schema_version != CONFIG_SCHEMA_VERSION:
        raise CliError(
            f"config schema_version {cfg.schema_version} unsupported "
            f"(expected {CONFIG_SCHEMA_VERSION})"
        )
    if parser.has_section("scenario"):
        kwargs = _coerce_fields(synth.ScenarioConfig, parser["scenario"])
        cfg.scenario_seed_explicit = "seed" in kwargs
        kwargs.setdefault("seed", cfg.seed)
        cfg.scenario = synth.ScenarioConfig(**kwargs)
    if parser.has_section("counts"):
        for label, value in parser["counts"].items():
            if label not in synth.LABELS:
                raise CliError(f"unknown label {label!r} in [counts]")
            cfg.counts[label] = int(value)
    return cfg


def _effective_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else seed


def _parse_int_list(expr: str) -> list[int]:
    """Accept "1..50" ranges or comma lists like "1,5,25"."""
    if ".." in expr:
        lo, hi = expr.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in expr.split(",") if x]


def _parse_float_list(expr: str) -> list[float]:
    return [float(x) for x in expr.split(",") if x]


def _canonical_schemes(expr: str) -> list[str]:
    out = []
    for name in expr.split(","):
        name = name.strip()
        if not name:
            continue
        if name == "tvar":
            name = "tvar-gaussian"
        if name not in calibrate.SCHEMES:
            raise CliError(
                f"unknown scheme {name!r}; choose from constant, band, tvar, tvar-quantile"
            )
        out.append(name)
    if not out:
        raise CliError("no schemes given")
    return out


def _success_id_embeddings(rset: trace.RolloutSet) -> np.ndarray:
    calib = trace.filter_rollouts(rset, outcome="success", distribution="id")
    if len(calib) == 0:
        raise CliError("no successful in-distribution rollouts to train on")
    return np.concatenate([[s.embedding for s in r.steps] for r in calib])


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if cfg.scenario is None or not cfg.counts:
        raise CliError("simulate needs [scenario] and [counts] sections in the config")
    seed = _effective_seed(args.seed if args.seed is not None else cfg.seed)
    scenario = cfg.scenario
    if not cfg.scenario_seed_explicit:
        scenario = dataclasses.replace(scenario, seed=seed)
    rset = synth.generate_dataset(scenario, cfg.counts, seed)
    trace.save_rollouts(rset, args.out)
    print(
        json.dumps(
            {
                "command": "simulate",
                "out": str(args.out),
                "rollouts": len(rset),
                "seed": seed,
                "config_hash": scenario.hash(),
            }
        )
    )
    return 0


def cmd_train_rnd(args: argparse.Namespace) -> int:
    seed = _effective_seed(args.seed)
    rset = trace.load_rollouts(args.traces)
    embeddings = _success_id_embeddings(rset)
    model = rnd.init_rnd(
        rset.embed_dim, out_dim=args.m, seed=seed, width_scale=args.width_scale
    )
    train_cfg = rnd.TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, seed=seed
    )
    model, history = rnd.train_rnd(model, embeddings, train_cfg)
    # content identity, not paths: pipeline artifacts must be byte-identical
    # wherever an identically-seeded run happens
    rnd.save_checkpoint(
        model,
        args.out,
        train_cfg=train_cfg,
        history=history,
        provenance=(
            f"traces={Path(args.traces).name} "
            f"ids_hash={config_hash({'ids': rset.ids()})} "
            f"n_embeddings={embeddings.shape[0]}"
        ),
    )
    final = history.train_loss[-1] if history.train_loss else None
    print(
        json.dumps(
            {
                "command": "train-rnd",
                "out": str(args.out),
                "n_embeddings": int(embeddings.shape[0]),
                "epochs": args.epochs,
                "final_train_loss": final,
                "seed": seed,
            }
        )
    )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    split_seed = _effective_seed(args.split_seed)
    rset = trace.load_rollouts(args.traces)
    calib = trace.filter_rollouts(rset, outcome="success", distribution="id")
    if len(calib) == 0:
        raise CliError("no successful in-distribution rollouts to calibrate on")
    model = rnd.load_checkpoint(args.rnd)
    ace_cfg = ace.fit_ace_ranges(calib, alpha=args.ace_alpha)

    obs_series, act_series = [], []
    for r in calib:
        obs, act = aggregate.score_rollout(r, model, ace_cfg, args.w_obs, args.w_act)
        obs_series.append(obs)
        act_series.append(act)

    horizon = calib.t_max
    scheme = args.scheme if args.scheme != "tvar" else f"tvar-{args.tvar_variant}"

    def build(series):
        if scheme == "constant":
            return calibrate.cp_constant(series, args.delta, horizon=horizon)
        if scheme == "band":
            return calibrate.cp_band(
                series, args.delta, split_seed=split_seed, horizon=horizon
            )
        return calibrate.time_varying(
            series, args.delta, variant=scheme.split("-", 1)[1], horizon=horizon
        )

    stage_config = {
        "traces": Path(args.traces).name,
        "calib_ids": calib.ids(),
        "rnd": Path(args.rnd).name,
        "scheme": scheme,
        "delta": args.delta,
        "w_obs": args.w_obs,
        "w_act": args.w_act,
        "ace_alpha": args.ace_alpha,
        "split_seed": split_seed,
    }
    bundle = calibrate.ProfileFile(
        profiles={"obs": build(obs_series), "act": build(act_series)},
        ace=ace_cfg,
        seed=split_seed,
        provenance=(
            f"traces={Path(args.traces).name} rnd={Path(args.rnd).name} "
            f"scheme={scheme} delta={args.delta} w_obs={args.w_obs} "
            f"w_act={args.w_act} config_hash={config_hash(stage_config)}"
        ),
    )
    calibrate.save_profiles(bundle, args.out)
    print(
        json.dumps(
            {
                "command": "calibrate",
                "out": str(args.out),
                "scheme": scheme,
                "delta": args.delta,
                "calibration_rollouts": len(calib),
            }
        )
    )
    return 0


def cmd_monitor(args: argparse.Namespace) -> int:
    rset = trace.load_rollouts(args.traces)
    model = rnd.load_checkpoint(args.rnd)
    obs_bundle = calibrate.load_profiles(args.profile_obs)
    act_bundle = calibrate.load_profiles(args.profile_act)
    if "obs" not in obs_bundle.profiles:
        raise CliError(f"{args.profile_obs} has no 'obs' profile")
    if "act" not in act_bundle.profiles:
        raise CliError(f"{args.profile_act} has no 'act' profile")
    if act_bundle.ace is None:
        raise CliError(f"{args.profile_act} carries no action-entropy config")
    profile_obs = obs_bundle.profiles["obs"]
    profile_act = act_bundle.profiles["act"]

    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for r in rset:
            mon = detect.Monitor(
                model,
                act_bundle.ace,
                profile_obs,
                profile_act,
                window_obs=profile_obs.window,
                window_act=profile_act.window,
                mode=args.mode,
                rollout_id=r.id,
            )
            for step in r.steps:
                mon.push(step)
            res = mon.result()
            sink.write(
                json.dumps(
                    {
                        "id": r.id,
                        "flagged": res.flagged,
                        "t_star": res.detection_index,
                        "normalized_dt": res.normalized_dt,
                    }
                )
                + "\n"
            )
    finally:
        if args.out:
            sink.close()
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    split_seed = _effective_seed(args.split_seed)
    dataset = trace.load_rollouts(args.traces)
    calib_all = trace.load_rollouts(args.calib)
    calib = trace.filter_rollouts(calib_all, outcome="success", distribution="id")
    if len(calib) == 0:
        raise CliError("calibration file has no successful in-distribution rollouts")

    overlap = sorted(set(dataset.ids()) & set(calib.ids()))
    if overlap:
        # shared train/calibration data is permitted; flag it and continue
        print(
            json.dumps(
                {
                    "warning": "calibration rollouts overlap evaluation traces",
                    "ids": overlap[:20],
                    "n_overlapping": len(overlap),
                }
            ),
            file=sys.stderr,
        )

    model = rnd.load_checkpoint(args.rnd)
    ace_cfg = ace.fit_ace_ranges(calib, alpha=args.ace_alpha)
    report = evaluate.sweep(
        dataset,
        calib,
        model,
        ace_cfg,
        schemes=_canonical_schemes(args.schemes),
        windows=_parse_int_list(args.w),
        deltas=_parse_float_list(args.deltas),
        mode=args.mode,
        band_split_seed=split_seed,
    )
    report.write_csv(args.out)
    best = report.best
    print(
        json.dumps(
            {
                "command": "evaluate",
                "out": str(args.out),
                "cells": len(report.cells),
                "best_scheme": best.scheme,
                "best_w": best.window,
                "best_twa": best.record.twa,
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="failpred",
        description="Runtime failure prediction for generative action-chunk policies",
    )
    parser.add_argument("--version", action="version", version=f"failpred {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic rollout trace file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-rnd", help="train the distillation scorer on ID successes")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width-scale", type=float, default=1.0)
    p.add_argument("--m", type=int, default=rnd.DEFAULT_OUT_DIM, help="output feature dim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=rnd.TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=rnd.TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=rnd.TrainConfig.lr)
    p.set_defaults(func=cmd_train_rnd)

    p = sub.add_parser("calibrate", help="fit alarm thresholds on successful ID rollouts")
    p.add_argument("--traces", required=True)
    p.add_argument("--rnd", required=True)
    p.add_argument("--scheme", required=True, choices=("constant", "band", "tvar"))
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--w-obs", type=int, required=True)
    p.add_argument("--w-act", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ace-alpha", type=float, default=0.05)
    p.add_argument("--tvar-variant", choices=("gaussian", "quantile"), default="gaussian")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("monitor", help="stream rollouts through the combined detector")
    p.add_argument("--traces", required=True)
    p.add_argument("--rnd", required=True)
    p.add_argument("--profile-obs", required=True)
    p.add_argument("--profile-act", required=True)
    p.add_argument("--mode", choices=detect.MODES, default="and")
    p.add_argument("--out", default=None, help="result file (default: stdout)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("evaluate", help="grid-sweep schemes/windows/deltas and report metrics")
    p.add_argument("--traces", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--rnd", required=True)
    p.add_argument("--schemes", default=",".join(evaluate.DEFAULT_SCHEMES))
    p.add_argument("--w", default="1..50", help='windows, e.g. "1..50" or "1,5,25"')
    p.add_argument("--mode", choices=detect.MODES, default="and")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--deltas",
        default=",".join(repr(d) for d in evaluate.DEFAULT_DELTAS),
        help="comma list of per-rollout false-alarm budgets",
    )
    p.add_argument("--ace-alpha", type=float, default=0.05)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
