"""Binned entropy of sampled action chunks (the ACE score).

Uncertainty in a generative policy's output shows up as samples spread over
several behavior modes, not as large variance around one mean, so we measure
it as the entropy of a joint histogram over the B actions sampled for each
prediction step, then sum over the chunk horizon.

Bin geometry is fixed at calibration time: per action dimension d the cell
width is ``alpha * R_d``, where R_d is the max-minus-min of that dimension
over every calibration action. For a new batch the bins are anchored at the
per-batch minimum, which makes the score translation invariant, and the
count of bins per dimension is ``ceil(batch_span / cell_width)``. Only
occupied cells are accumulated (at most B of them), so the exponential joint
bin count never materializes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import PolicyStep, RolloutSet

# Range floor for action dimensions that are constant over the whole
# calibration set; keeps the cell width positive while leaving such
# dimensions entropy-inert.
RANGE_FLOOR = 1e-9

# Guard against int64 overflow when a floored range meets a wild batch.
_MAX_BINS = float(2**62)


@dataclass(frozen=True, eq=False)
class AceConfig:
    """Cell-size factor and per-dimension action ranges, fixed at calibration.

    Entropies are reported in bits (base-2 logarithm).
    """

    alpha: float
    ranges: np.ndarray
    floored_dims: tuple[int, ...] = ()
    log_base: int = 2

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.ranges.ndim != 1 or self.ranges.shape[0] < 1:
            raise ValueError("ranges must be a nonempty vector")
        if not np.all(self.ranges > 0.0):
            raise ValueError("ranges must be positive")
        if self.log_base != 2:
            raise ValueError("entropies are defined in bits; log_base is fixed at 2")

    @property
    def action_dim(self) -> int:
        return self.ranges.shape[0]


def fit_ace_ranges(calib: RolloutSet, alpha: float = 0.05) -> AceConfig:
    """Per-dimension max-minus-min over every calibration action entry."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if len(calib) == 0:
        raise ValueError("empty calibration set")
    lo = np.full(calib.action_dim, np.inf)
    hi = np.full(calib.action_dim, -np.inf)
    for r in calib:
        for s in r.steps:
            flat = s.actions.reshape(-1, calib.action_dim)
            lo = np.minimum(lo, flat.min(axis=0))
            hi = np.maximum(hi, flat.max(axis=0))
    ranges = hi - lo
    floored = np.flatnonzero(ranges < RANGE_FLOOR)
    ranges[floored] = RANGE_FLOOR
    ranges.setflags(write=False)
    cfg = AceConfig(alpha=alpha, ranges=ranges, floored_dims=tuple(int(i) for i in floored))
    cfg.validate()
    return cfg


def step_entropy(cfg: AceConfig, actions: np.ndarray) -> float:
    """Joint-histogram entropy in bits of a (B, D) sample batch.

    Cell index of sample j in dimension d is
    ``floor((a[j, d] - min_d) / (alpha * R_d))`` clamped into
    ``[0, ceil(span_d / (alpha * R_d)) - 1]``; a dimension whose batch span
    is zero contributes a single cell. Result lies in [0, log2 B].
    """
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected (B, D) actions, got shape {a.shape}")
    b, d = a.shape
    if b < 2:
        raise ValueError(f"need at least 2 samples, got {b}")
    if d != cfg.action_dim:
        raise ValueError(f"expected D={cfg.action_dim}, got {d}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite actions")

    widths = cfg.alpha * cfg.ranges
    mins = a.min(axis=0)
    spans = a.max(axis=0) - mins
    n_bins_f = np.ceil(spans / widths)
    if np.any(n_bins_f >= _MAX_BINS):
        raise ValueError("bin count overflow: batch span vastly exceeds calibration range")
    n_bins = np.maximum(n_bins_f.astype(np.int64), 1)
    idx = np.floor((a - mins) / widths).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)

    _, counts = np.unique(idx, axis=0, return_counts=True)
    # scalar accumulation in sorted-cell order keeps the result reproducible
    # against a plain nested-loop histogram
    h = 0.0
    for c in counts.tolist():
        p = c / b
        h -= p * math.log2(p)
    return h


def ace_score(cfg: AceConfig, step: PolicyStep | np.ndarray) -> float:
    """Sum of per-prediction-step entropies over the chunk horizon.

    Accepts a PolicyStep or a raw (B, H, D) array; result lies in
    [0, H * log2 B].
    """
    actions = step.actions if isinstance(step, PolicyStep) else np.asarray(step, dtype=np.float64)
    if actions.ndim != 3:
        raise ValueError(f"expected (B, H, D) actions, got shape {actions.shape}")
    total = 0.0
    for i in range(actions.shape[1]):
        total += step_entropy(cfg, actions[:, i, :])
    return total
