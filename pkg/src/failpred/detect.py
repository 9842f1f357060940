"""Per-timestep failure decisions and the streaming runtime monitor.

A score signal fires at timestep t when it strictly exceeds its threshold
there; ties never fire. The combined detector applies AND/OR to the two
sub-decisions at the same timestep, so under AND both indicators must exceed
simultaneously, not merely each at some past time.

:class:`Monitor` is the online form: push one policy step at a time and get
the current decision back in amortized O(window) work. Replaying a rollout
through a Monitor is bit-identical to the batch path
(score -> window -> threshold), which the test suite checks exhaustively.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .ace import AceConfig, ace_score
from .aggregate import ScoreSeries, raw_scores, window_sum
from .calibrate import ThresholdProfile
from .rnd import RndModel, rnd_score
from .trace import PolicyStep, Rollout

MODES = ("and", "or")


@dataclass(eq=False)
class DetectionResult:
    """Boolean decision per policy timestep, plus the first-alarm summary."""

    rollout_id: str
    stride: int
    horizon: int
    per_step: np.ndarray

    def validate(self) -> None:
        if self.per_step.ndim != 1 or self.per_step.dtype != np.bool_:
            raise ValueError("per_step must be a 1-D boolean array")
        if self.stride < 1 or self.horizon < 1:
            raise ValueError("stride and horizon must be >= 1")

    @property
    def flagged(self) -> bool:
        return bool(self.per_step.any())

    @property
    def detection_index(self) -> int | None:
        """First flagged policy timestep, if any."""
        hits = np.flatnonzero(self.per_step)
        return int(hits[0]) * self.stride if hits.size else None

    @property
    def normalized_dt(self) -> float | None:
        """Detection time over the maximum episode length, in [0, 1]."""
        t_star = self.detection_index
        return None if t_star is None else t_star / self.horizon


def threshold_decide(series: ScoreSeries, profile: ThresholdProfile) -> DetectionResult:
    """Strict exceedance of the profile at every timestep of the series."""
    series.validate()
    profile.validate()
    if series.stride != profile.stride and not profile.is_constant:
        raise ValueError(
            f"series stride {series.stride} differs from profile stride {profile.stride}"
        )
    if not profile.covers(series.end_t):
        raise ValueError(
            f"profile horizon {profile.horizon} does not cover the series "
            f"(ends at t={series.end_t})"
        )
    thresholds = profile.thresholds_for(series.n_steps)
    return DetectionResult(
        rollout_id=series.rollout_id,
        stride=series.stride,
        horizon=profile.horizon,
        per_step=series.values > thresholds,
    )


def combine(res_obs: DetectionResult, res_act: DetectionResult, mode: str = "and") -> DetectionResult:
    """Elementwise AND/OR of two per-step decision vectors."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if res_obs.rollout_id != res_act.rollout_id:
        raise ValueError(
            f"rollout ids differ: {res_obs.rollout_id!r} vs {res_act.rollout_id!r}"
        )
    if res_obs.per_step.shape != res_act.per_step.shape or res_obs.stride != res_act.stride:
        raise ValueError("decision series have mismatched shapes or strides")
    op = np.logical_and if mode == "and" else np.logical_or
    return DetectionResult(
        rollout_id=res_obs.rollout_id,
        stride=res_obs.stride,
        horizon=max(res_obs.horizon, res_act.horizon),
        per_step=op(res_obs.per_step, res_act.per_step),
    )


def decide_rollout(
    r: Rollout,
    model: RndModel,
    ace_cfg: AceConfig,
    profile_obs: ThresholdProfile,
    profile_act: ThresholdProfile,
    window_obs: int,
    window_act: int,
    mode: str = "and",
) -> DetectionResult:
    """Batch path: score, window, threshold, combine."""
    obs_raw, act_raw = raw_scores(r, model, ace_cfg)
    res_obs = threshold_decide(window_sum(obs_raw, window_obs), profile_obs)
    res_act = threshold_decide(window_sum(act_raw, window_act), profile_act)
    return combine(res_obs, res_act, mode)


class Monitor:
    """Online failure monitor for a single rollout.

    Owns the per-rollout streaming state (trailing raw scores and decisions);
    the models and profiles it reads are shared and never written. One
    Monitor must only see the steps of one rollout, in order.
    """

    def __init__(
        self,
        model: RndModel,
        ace_cfg: AceConfig,
        profile_obs: ThresholdProfile,
        profile_act: ThresholdProfile,
        window_obs: int,
        window_act: int,
        mode: str = "and",
        rollout_id: str = "",
    ):
        if window_obs < 1 or window_act < 1:
            raise ValueError("windows must be >= 1")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        profile_obs.validate()
        profile_act.validate()
        self.model = model
        self.ace_cfg = ace_cfg
        self.profile_obs = profile_obs
        self.profile_act = profile_act
        self.window_obs = window_obs
        self.window_act = window_act
        self.mode = mode
        self.rollout_id = rollout_id
        self._recent_obs: deque[float] = deque(maxlen=window_obs)
        self._recent_act: deque[float] = deque(maxlen=window_act)
        self._decisions: list[bool] = []
        self._n = 0
        self._stride: int | None = None

    @staticmethod
    def _window_total(recent: deque[float]) -> float:
        acc = 0.0
        for v in recent:  # oldest to newest, matching the batch path
            acc += v
        return acc

    def push(self, step: PolicyStep) -> bool:
        """Consume the next policy step and return the current decision."""
        if self._n == 0:
            if step.t != 0:
                raise ValueError(f"first step must be at t=0, got t={step.t}")
        else:
            stride = self._stride
            if stride is None:
                stride = step.t  # second step fixes the stride
                if stride < 1:
                    raise ValueError(f"steps must advance, got t={step.t} after t=0")
                self._stride = stride
            if step.t != self._n * stride:
                raise ValueError(
                    f"out-of-order step: expected t={self._n * stride}, got t={step.t}"
                )
        self._recent_obs.append(rnd_score(self.model, step.embedding))
        self._recent_act.append(ace_score(self.ace_cfg, step))
        eta_obs = self._window_total(self._recent_obs)
        eta_act = self._window_total(self._recent_act)
        fire_obs = eta_obs > self.profile_obs.threshold_at(step.t)
        fire_act = eta_act > self.profile_act.threshold_at(step.t)
        decision = (fire_obs and fire_act) if self.mode == "and" else (fire_obs or fire_act)
        self._decisions.append(bool(decision))
        self._n += 1
        return bool(decision)

    @property
    def decision(self) -> bool:
        """Latest decision; reading never mutates the monitor."""
        return self._decisions[-1] if self._decisions else False

    @property
    def flagged(self) -> bool:
        return any(self._decisions)

    def result(self) -> DetectionResult:
        if self._n == 0:
            raise ValueError("no steps pushed yet")
        return DetectionResult(
            rollout_id=self.rollout_id,
            stride=self._stride if self._stride is not None else 1,
            horizon=max(self.profile_obs.horizon, self.profile_act.horizon),
            per_step=np.array(self._decisions, dtype=np.bool_),
        )


def replay(
    r: Rollout,
    model: RndModel,
    ace_cfg: AceConfig,
    profile_obs: ThresholdProfile,
    profile_act: ThresholdProfile,
    window_obs: int,
    window_act: int,
    mode: str = "and",
) -> DetectionResult:
    """Run a full rollout through a fresh Monitor, step by step."""
    mon = Monitor(
        model,
        ace_cfg,
        profile_obs,
        profile_act,
        window_obs,
        window_act,
        mode,
        rollout_id=r.id,
    )
    for step in r.steps:
        mon.push(step)
    return mon.result()
