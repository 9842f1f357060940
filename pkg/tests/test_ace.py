from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from failpred import AceConfig, ace_score, fit_ace_ranges, step_entropy
from failpred.ace import RANGE_FLOOR

from conftest import (
    oracle_ace_score,
    oracle_step_entropy,
    rollout_from_actions,
    set_from_rollouts,
)


def _cfg(ranges, alpha=0.05) -> AceConfig:
    return AceConfig(alpha=alpha, ranges=np.asarray(ranges, dtype=np.float64))


def test_fit_ranges_is_max_minus_min():
    actions = np.zeros((4, 2, 2))
    actions[:, :, 0] = np.linspace(-1.0, 3.0, 8).reshape(4, 2)
    actions[:, :, 1] = np.linspace(0.5, 1.0, 8).reshape(4, 2)
    rset = set_from_rollouts([rollout_from_actions([actions])])
    cfg = fit_ace_ranges(rset, alpha=0.1)
    assert cfg.ranges[0] == 4.0
    assert cfg.ranges[1] == 0.5
    assert cfg.floored_dims == ()


def test_fit_ranges_floors_constant_dimension():
    actions = np.zeros((4, 1, 2))
    actions[:, :, 1] = np.arange(4).reshape(4, 1)
    rset = set_from_rollouts([rollout_from_actions([actions])])
    cfg = fit_ace_ranges(rset, alpha=0.2)
    assert cfg.ranges[0] == RANGE_FLOOR
    assert cfg.floored_dims == (0,)


def test_fit_ranges_deterministic(id_dataset):
    a = fit_ace_ranges(id_dataset, alpha=0.07)
    b = fit_ace_ranges(id_dataset, alpha=0.07)
    assert np.array_equal(a.ranges, b.ranges)
    assert a.floored_dims == b.floored_dims


def test_identical_rows_give_zero_bits():
    cfg = _cfg([1.0, 1.0])
    actions = np.tile([[0.3, -0.7]], (8, 1))
    assert step_entropy(cfg, actions) == 0.0


def test_two_even_cells_give_one_bit():
    # width alpha*R = 0.5 splits {0, 0, 1, 1} into two cells of two
    cfg = _cfg([2.0], alpha=0.25)
    actions = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert step_entropy(cfg, actions) == 1.0


def test_matches_nested_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(60):
        b = int(rng.integers(2, 33))
        d = int(rng.integers(1, 4))
        cfg = _cfg(rng.uniform(0.5, 5.0, size=d), alpha=float(rng.uniform(0.02, 0.5)))
        actions = rng.normal(0.0, rng.uniform(0.05, 3.0), size=(b, d))
        assert step_entropy(cfg, actions) == oracle_step_entropy(cfg, actions)


def test_chunk_score_is_sum_of_step_entropies():
    rng = np.random.default_rng(1)
    cfg = _cfg([2.0, 3.0], alpha=0.1)
    actions = rng.normal(size=(16, 4, 2))
    total = 0.0
    for i in range(4):
        total += step_entropy(cfg, actions[:, i, :])
    assert ace_score(cfg, actions) == total
    assert ace_score(cfg, actions) == oracle_ace_score(cfg, actions)


def test_chunk_score_additivity_on_constructed_inputs():
    cfg = _cfg([2.0], alpha=0.25)
    one_bit = [[0.0], [0.0], [1.0], [1.0]]
    half_bit = [[0.0], [0.0], [0.0], [1.0]]
    actions = np.stack(
        [np.column_stack([a, b]) for a, b in zip(one_bit, half_bit)], axis=0
    ).reshape(4, 2, 1)
    expected = 1.0 + (-0.75 * math.log2(0.75) - 0.25 * math.log2(0.25))
    assert ace_score(cfg, actions) == expected


def test_all_chunks_identical_scores_zero():
    cfg = _cfg([1.0, 1.0])
    actions = np.tile(np.array([[0.1, 0.2], [0.1, 0.2], [0.1, 0.2]])[:, None, :], (1, 3, 1))
    assert ace_score(cfg, actions) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_entropy_bounds_and_invariances(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(2, 24))
    d = int(rng.integers(1, 4))
    cfg = _cfg(rng.uniform(0.2, 4.0, size=d), alpha=float(rng.uniform(0.02, 0.6)))
    actions = rng.normal(0.0, 1.0, size=(b, d))
    h = step_entropy(cfg, actions)
    assert 0.0 <= h <= math.log2(b) + 1e-12
    # permutation invariance, exactly
    assert step_entropy(cfg, actions[rng.permutation(b)]) == h
    # translation invariance, exactly
    shift = rng.uniform(-10.0, 10.0, size=d)
    assert step_entropy(cfg, actions + shift) == h


def test_halving_alpha_never_decreases_entropy():
    rng = np.random.default_rng(7)
    for _ in range(40):
        b = int(rng.integers(2, 20))
        d = int(rng.integers(1, 3))
        alpha = float(rng.uniform(0.05, 0.5))
        cfg = _cfg(rng.uniform(0.5, 3.0, size=d), alpha=alpha)
        half = _cfg(cfg.ranges, alpha=alpha / 2)
        actions = rng.normal(size=(b, d))  # continuous draws: distinct coords
        assert step_entropy(half, actions) >= step_entropy(cfg, actions)


def test_input_validation():
    cfg = _cfg([1.0])
    with pytest.raises(ValueError, match="2 samples"):
        step_entropy(cfg, np.zeros((1, 1)))
    with pytest.raises(ValueError, match="non-finite"):
        step_entropy(cfg, np.array([[0.0], [np.nan]]))
    with pytest.raises(ValueError, match="D="):
        step_entropy(cfg, np.zeros((4, 2)))
    with pytest.raises(ValueError, match="alpha"):
        _cfg([1.0], alpha=1.5).validate()
    with pytest.raises(ValueError, match="bits"):
        AceConfig(alpha=0.1, ranges=np.ones(1), log_base=3).validate()
