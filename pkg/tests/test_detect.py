from __future__ import annotations

import math

import numpy as np
import pytest

from failpred import (
    Monitor,
    combine,
    cp_band,
    cp_constant,
    decide_rollout,
    fit_ace_ranges,
    generate_dataset,
    replay,
    score_rollout,
    threshold_decide,
    window_sum,
)
from failpred.calibrate import ThresholdProfile

from conftest import make_series


def _const_profile(value, delta=0.1, stride=4, horizon=40, window=1):
    return ThresholdProfile(
        scheme="constant",
        delta=delta,
        stride=stride,
        horizon=horizon,
        value=value,
        window=window,
    )


def test_infinite_threshold_never_fires():
    res = threshold_decide(make_series([5.0, 50.0, 500.0]), _const_profile(math.inf))
    assert not res.flagged
    assert res.detection_index is None
    assert res.normalized_dt is None


def test_first_exceedance_and_normalized_dt():
    res = threshold_decide(make_series([1.0, 5.0, 2.0]), _const_profile(3.0))
    assert res.per_step.tolist() == [False, True, False]
    assert res.flagged
    assert res.detection_index == 4
    assert res.normalized_dt == 4 / 40


def test_ties_never_fire():
    profile = ThresholdProfile(
        scheme="tvar-gaussian",
        delta=0.1,
        stride=4,
        horizon=8,
        values=np.array([1.0, 2.0, 3.0]),
    )
    res = threshold_decide(make_series([1.0, 2.0, 3.0]), profile)
    assert not res.flagged


def test_profile_must_cover_series():
    profile = ThresholdProfile(
        scheme="band", delta=0.1, stride=4, horizon=4, values=np.array([1.0, 1.0])
    )
    with pytest.raises(ValueError, match="cover"):
        threshold_decide(make_series([0.1, 0.2, 0.3]), profile)


def _result_from_bools(bools, rollout_id="r"):
    series = make_series([2.0 if b else 0.0 for b in bools], rollout_id=rollout_id)
    return threshold_decide(series, _const_profile(1.0))


def test_combine_and_or():
    obs = _result_from_bools([False, False, True, False, False, False])
    act = _result_from_bools([False, False, False, False, False, True])
    assert not combine(obs, act, "and").flagged
    res_or = combine(obs, act, "or")
    assert res_or.flagged and res_or.detection_index == 2 * 4


def test_combine_simultaneous_and():
    obs = _result_from_bools([False, False, False, True, True, True])
    act = _result_from_bools([False, True, False, True, True, True])
    res = combine(obs, act, "and")
    assert res.detection_index == 3 * 4


def test_combine_rejects_mismatched_inputs():
    a = _result_from_bools([True, False])
    b = _result_from_bools([True], rollout_id="other")
    with pytest.raises(ValueError, match="ids differ"):
        combine(a, b, "and")
    c = _result_from_bools([True])
    with pytest.raises(ValueError, match="mismatched"):
        combine(a, c, "or")


def test_and_dominance_and_action_side_inclusion(small_cfg, tiny_model):
    rset = generate_dataset(
        small_cfg, {"success_id": 6, "fail_id": 6, "success_ood": 3, "fail_ood": 3}, seed=13
    )
    calib = generate_dataset(small_cfg, {"success_id": 10}, seed=14)
    ace_cfg = fit_ace_ranges(calib, alpha=0.05)
    obs_series = []
    act_series = []
    for r in calib:
        obs, act = score_rollout(r, tiny_model, ace_cfg, 3, 3)
        obs_series.append(obs)
        act_series.append(act)
    profile_obs = cp_constant(obs_series, 0.3, horizon=calib.t_max)
    profile_act = cp_constant(act_series, 0.3, horizon=calib.t_max)

    flagged_and, flagged_or, flagged_act = set(), set(), set()
    for r in rset:
        res_and = decide_rollout(
            r, tiny_model, ace_cfg, profile_obs, profile_act, 3, 3, mode="and"
        )
        res_or = decide_rollout(
            r, tiny_model, ace_cfg, profile_obs, profile_act, 3, 3, mode="or"
        )
        obs, act = score_rollout(r, tiny_model, ace_cfg, 3, 3)
        res_act = threshold_decide(act, profile_act)
        if res_and.flagged:
            flagged_and.add(r.id)
            assert res_or.flagged
            assert res_or.detection_index <= res_and.detection_index
        if res_or.flagged:
            flagged_or.add(r.id)
        if res_act.flagged:
            flagged_act.add(r.id)
    # combined alarms are a subset of action-only alarms (same bound applies)
    assert flagged_and <= flagged_act
    assert flagged_and <= flagged_or


def test_streaming_replay_equals_batch(small_cfg, tiny_model):
    rset = generate_dataset(
        small_cfg, {"success_id": 10, "fail_id": 10, "fail_ood": 10}, seed=17
    )
    calib = generate_dataset(small_cfg, {"success_id": 12}, seed=18)
    ace_cfg = fit_ace_ranges(calib, alpha=0.05)
    obs_series = []
    act_series = []
    for r in calib:
        obs, act = score_rollout(r, tiny_model, ace_cfg, 4, 2)
        obs_series.append(obs)
        act_series.append(act)
    profile_obs = cp_band(obs_series, 0.2, split_seed=0, horizon=calib.t_max)
    profile_act = cp_constant(act_series, 0.2, horizon=calib.t_max)
    for mode in ("and", "or"):
        for r in rset:
            batch = decide_rollout(
                r, tiny_model, ace_cfg, profile_obs, profile_act, 4, 2, mode=mode
            )
            stream = replay(
                r, tiny_model, ace_cfg, profile_obs, profile_act, 4, 2, mode=mode
            )
            assert stream.per_step.tolist() == batch.per_step.tolist()
            assert stream.detection_index == batch.detection_index


def test_monitor_decision_read_is_pure(small_cfg, tiny_model, id_dataset):
    ace_cfg = fit_ace_ranges(id_dataset, alpha=0.05)
    r = id_dataset.rollouts[0]
    mon = Monitor(
        tiny_model,
        ace_cfg,
        _const_profile(math.inf, stride=small_cfg.stride, horizon=small_cfg.max_len),
        _const_profile(math.inf, stride=small_cfg.stride, horizon=small_cfg.max_len),
        window_obs=2,
        window_act=2,
        rollout_id=r.id,
    )
    assert mon.decision is False  # before any step
    mon.push(r.steps[0])
    first = mon.decision
    for _ in range(5):
        assert mon.decision == first
    assert mon.result().per_step.shape == (1,)


def test_monitor_rejects_out_of_order_steps(id_dataset, tiny_model, small_cfg):
    ace_cfg = fit_ace_ranges(id_dataset, alpha=0.05)
    r = id_dataset.rollouts[0]
    profile = _const_profile(1.0, stride=small_cfg.stride, horizon=small_cfg.max_len)
    mon = Monitor(tiny_model, ace_cfg, profile, profile, 1, 1)
    with pytest.raises(ValueError, match="t=0"):
        mon.push(r.steps[1])
    mon2 = Monitor(tiny_model, ace_cfg, profile, profile, 1, 1)
    mon2.push(r.steps[0])
    mon2.push(r.steps[1])
    with pytest.raises(ValueError, match="out-of-order"):
        mon2.push(r.steps[1])


def test_and_decision_depends_only_on_current_window():
    # integer scores: permuting older in-window values keeps sums exact
    raw_obs = [1.0, 3.0, 2.0, 5.0, 1.0, 4.0]
    raw_act = [2.0, 1.0, 6.0, 1.0, 3.0, 2.0]
    w = 3
    profile = _const_profile(7.0, stride=4, horizon=40, window=w)

    def decisions(obs_vals, act_vals):
        obs = threshold_decide(window_sum(make_series(obs_vals), w), profile)
        act = threshold_decide(window_sum(make_series(act_vals), w), profile)
        return combine(obs, act, "and").per_step.tolist()

    base = decisions(raw_obs, raw_act)
    t_idx = 4  # window covers indices 2..4
    for shuffled in ([raw_obs[i] for i in (1, 0, 3, 2, 4, 5)],):
        assert decisions(shuffled, raw_act)[t_idx] == base[t_idx]
    shuffled_act = [raw_act[i] for i in (0, 1, 4, 3, 2, 5)]  # permute inside window
    assert decisions(raw_obs, shuffled_act)[t_idx] == base[t_idx]
