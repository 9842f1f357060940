"""Sliding-window aggregation of per-step scores into failure signals.

The windowed signal at step n is the sum of the most recent ``w`` raw scores
(fewer at the start of the episode, where the history is shorter than the
window). Summation is scalar and oldest-to-newest everywhere, so the batch
path here and the streaming monitor in :mod:`failpred.detect` produce
bit-identical values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ace import AceConfig, ace_score
from .rnd import RndModel, rnd_score
from .trace import Rollout

KINDS = ("rnd", "ace", "custom")


@dataclass(eq=False)
class ScoreSeries:
    """Per-policy-timestep scores for one rollout."""

    rollout_id: str
    kind: str
    stride: int
    values: np.ndarray
    window: int = 1

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.values.ndim != 1 or self.values.shape[0] == 0:
            raise ValueError("values must be a nonempty vector")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("scores must be finite and nonnegative")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> np.ndarray:
        """Policy timesteps 0, h, 2h, ... matching the values."""
        return np.arange(self.n_steps, dtype=np.int64) * self.stride

    @property
    def end_t(self) -> int:
        return (self.n_steps - 1) * self.stride


def window_sum(raw: ScoreSeries, w: int) -> ScoreSeries:
    """Sum each step's trailing window of raw scores.

    Output index n covers raw indices max(0, n-w+1)..n, so early steps sum
    over however much history exists. w=1 is the identity.
    """
    if w < 1:
        raise ValueError("window must be >= 1")
    raw.validate()
    vals = raw.values.tolist()
    out = np.empty(len(vals), dtype=np.float64)
    for n in range(len(vals)):
        acc = 0.0
        for v in vals[max(0, n - w + 1) : n + 1]:
            acc += v
        out[n] = acc
    return ScoreSeries(
        rollout_id=raw.rollout_id,
        kind=raw.kind,
        stride=raw.stride,
        values=out,
        window=w,
    )


def raw_scores(
    r: Rollout, model: RndModel, ace_cfg: AceConfig
) -> tuple[ScoreSeries, ScoreSeries]:
    """Per-step observation and action scores, unwindowed."""
    obs = np.array([rnd_score(model, s.embedding) for s in r.steps], dtype=np.float64)
    act = np.array([ace_score(ace_cfg, s) for s in r.steps], dtype=np.float64)
    return (
        ScoreSeries(rollout_id=r.id, kind="rnd", stride=r.stride, values=obs),
        ScoreSeries(rollout_id=r.id, kind="ace", stride=r.stride, values=act),
    )


def score_rollout(
    r: Rollout,
    model: RndModel,
    ace_cfg: AceConfig,
    window_obs: int,
    window_act: int,
) -> tuple[ScoreSeries, ScoreSeries]:
    """Windowed observation and action signals for one rollout."""
    obs_raw, act_raw = raw_scores(r, model, ace_cfg)
    return window_sum(obs_raw, window_obs), window_sum(act_raw, window_act)
