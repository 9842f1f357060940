from __future__ import annotations

import math

import numpy as np
import pytest

from failpred import (
    AceConfig,
    ScenarioConfig,
    ScoreSeries,
    generate_dataset,
    init_rnd,
)
from failpred.trace import PolicyStep, Rollout, RolloutSet


@pytest.fixture(scope="session")
def small_cfg() -> ScenarioConfig:
    return ScenarioConfig(
        embed_dim=6,
        batch=16,
        chunk_len=3,
        action_dim=2,
        stride=4,
        max_len=40,
        n_modes=2,
        mode_separation=4.0,
        base_noise=0.1,
        seed=11,
    )


@pytest.fixture(scope="session")
def id_dataset(small_cfg):
    return generate_dataset(small_cfg, {"success_id": 12}, seed=5)


@pytest.fixture(scope="session")
def tiny_model(small_cfg):
    return init_rnd(small_cfg.embed_dim, out_dim=8, seed=3, width_scale=0.02)


def make_series(values, stride=4, kind="custom", rollout_id="r", window=1) -> ScoreSeries:
    return ScoreSeries(
        rollout_id=rollout_id,
        kind=kind,
        stride=stride,
        values=np.asarray(values, dtype=np.float64),
        window=window,
    )


def rollout_from_actions(
    action_steps, stride=4, rollout_id="r0", outcome="success", distribution="id", t_max=None
) -> Rollout:
    """Rollout with given (B, H, D) action arrays and dummy embeddings."""
    steps = []
    for n, actions in enumerate(action_steps):
        actions = np.asarray(actions, dtype=np.float64)
        steps.append(
            PolicyStep(
                t=n * stride,
                embedding=np.zeros(3),
                actions=actions,
            )
        )
    return Rollout(
        id=rollout_id,
        outcome=outcome,
        distribution=distribution,
        stride=stride,
        t_max=t_max if t_max is not None else (len(steps) - 1) * stride,
        steps=steps,
    )


def set_from_rollouts(rollouts) -> RolloutSet:
    s0 = rollouts[0].steps[0]
    return RolloutSet(
        rollouts=list(rollouts),
        embed_dim=s0.embedding.shape[0],
        stride=rollouts[0].stride,
        chunk_len=s0.actions.shape[1],
        action_dim=s0.actions.shape[2],
        t_max=max(r.t_max for r in rollouts),
    )


def oracle_step_entropy(cfg: AceConfig, actions: np.ndarray) -> float:
    """Nested-loop joint-histogram entropy with explicit cell maps."""
    a = np.asarray(actions, dtype=np.float64)
    b, d = a.shape
    mins = [min(a[j, k] for j in range(b)) for k in range(d)]
    maxs = [max(a[j, k] for j in range(b)) for k in range(d)]
    n_bins = []
    for k in range(d):
        width = cfg.alpha * cfg.ranges[k]
        n = math.ceil((maxs[k] - mins[k]) / width)
        n_bins.append(max(n, 1))
    cells: dict[tuple[int, ...], int] = {}
    for j in range(b):
        key = []
        for k in range(d):
            width = cfg.alpha * cfg.ranges[k]
            idx = math.floor((a[j, k] - mins[k]) / width)
            idx = min(max(idx, 0), n_bins[k] - 1)
            key.append(idx)
        key = tuple(key)
        cells[key] = cells.get(key, 0) + 1
    h = 0.0
    for key in sorted(cells):
        p = cells[key] / b
        h -= p * math.log2(p)
    return h


def oracle_ace_score(cfg: AceConfig, actions: np.ndarray) -> float:
    total = 0.0
    for i in range(actions.shape[1]):
        total += oracle_step_entropy(cfg, actions[:, i, :])
    return total


def oracle_window_sum(values, w: int) -> list[float]:
    """Naive O(n*w) re-summation, oldest to newest."""
    out = []
    for n in range(len(values)):
        acc = 0.0
        for v in values[max(0, n - w + 1) : n + 1]:
            acc += float(v)
        out.append(acc)
    return out
