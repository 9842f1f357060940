"""Threshold profiles from calibration score series.

Three schemes turn the windowed score signals of M successful
in-distribution rollouts into a per-timestep alarm threshold for a target
false-alarm budget delta:

``constant``
    One scalar: the finite-sample conformal quantile (rank
    ``ceil((M+1)(1-delta))``) of the per-rollout maximum scores. Carries the
    distribution-free guarantee that a fresh successful rollout exceeds the
    threshold anywhere with probability at most delta.

``band``
    A one-sided functional band ``mu(t) + k * s(t)``: half the calibration
    set estimates the pointwise mean ``mu``, the other half calibrates the
    width multiplier ``k`` as the conformal quantile of each rollout's
    maximum modulated deviation ``max_t |eta_i(t) - mu(t)| / s(t)``. Same
    guarantee, usually tighter than the constant.

``time-varying``
    Pointwise statistics with no finite-sample guarantee: either
    ``mu(t) + z(1-delta) * sigma(t)`` with the Gaussian quantile ``z``, or
    the pointwise empirical ``1-delta`` quantile (rank ``ceil(M(1-delta))``).

Whenever a conformal rank exceeds the available sample count the threshold
is +inf (the detector never fires) rather than an error, which keeps
parameter sweeps total. Unequal rollout lengths are handled by padding each
series to the common horizon with its final value.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ace import AceConfig
from .aggregate import ScoreSeries
from .util import TOOL_VERSION, config_hash, derive_rng

PROFILE_SCHEMA_VERSION = 1

SCHEMES = ("constant", "band", "tvar-gaussian", "tvar-quantile")

# Acklam's rational approximation of the standard normal inverse CDF;
# absolute error stays below 1e-8, comfortably inside the 1.5e-7 budget.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse CDF of the standard normal, no external dependency."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return -num / den
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def conformal_rank(m: int, delta: float) -> int:
    """Finite-sample quantile rank ceil((m+1)(1-delta)); +inf if it exceeds m."""
    return math.ceil((m + 1) * (1.0 - delta))


@dataclass(eq=False)
class ThresholdProfile:
    """Alarm threshold per policy timestep for one score kind.

    ``window`` records the aggregation window the calibration series were
    summed over; a monitor consuming the profile must aggregate new scores
    the same way.
    """

    scheme: str
    delta: float
    stride: int
    horizon: int
    value: float | None = None
    values: np.ndarray | None = None
    window: int = 1
    provenance: str = ""

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.stride < 1 or self.horizon < 0:
            raise ValueError("stride must be >= 1 and horizon >= 0")
        if (self.value is None) == (self.values is None):
            raise ValueError("exactly one of value/values must be set")
        if self.values is not None:
            expected = self.horizon // self.stride + 1
            if self.values.shape != (expected,):
                raise ValueError(
                    f"per-timestep profile must cover every stride index up to the "
                    f"horizon: expected {expected} entries, got {self.values.shape}"
                )
            if np.any(np.isnan(self.values)):
                raise ValueError("thresholds must be finite or +inf")

    @property
    def is_constant(self) -> bool:
        return self.values is None

    def covers(self, t: int) -> bool:
        # the horizon also bounds detection-time normalization, so even
        # constant profiles refuse timesteps beyond it
        return 0 <= t <= self.horizon

    def threshold_at(self, t: int) -> float:
        if not self.covers(t):
            raise ValueError(f"t={t} outside the calibrated horizon {self.horizon}")
        if self.is_constant:
            return float(self.value)
        if t % self.stride != 0:
            raise ValueError(f"t={t} is not a multiple of the stride {self.stride}")
        return float(self.values[t // self.stride])

    def thresholds_for(self, n_steps: int) -> np.ndarray:
        """Vector of thresholds for the first n_steps stride indices."""
        if self.is_constant:
            return np.full(n_steps, float(self.value))
        if n_steps > self.values.shape[0]:
            raise ValueError(
                f"series has {n_steps} steps but the profile covers only "
                f"{self.values.shape[0]}"
            )
        return self.values[:n_steps].copy()


def pad_series(series: ScoreSeries, horizon: int) -> ScoreSeries:
    """Extend to the horizon grid by repeating the final value."""
    series.validate()
    n_target = horizon // series.stride + 1
    n = series.n_steps
    if n >= n_target:
        return series
    values = np.concatenate(
        [series.values, np.full(n_target - n, series.values[-1])]
    )
    return ScoreSeries(
        rollout_id=series.rollout_id,
        kind=series.kind,
        stride=series.stride,
        values=values,
        window=series.window,
    )


def _common_grid(
    series_set: list[ScoreSeries], horizon: int | None
) -> tuple[np.ndarray, int, int, int]:
    """Stack all series onto one padded (M, G) grid."""
    if not series_set:
        raise ValueError("empty calibration series set")
    strides = {s.stride for s in series_set}
    if len(strides) != 1:
        raise ValueError(f"series strides differ: {sorted(strides)}")
    stride = strides.pop()
    windows = {s.window for s in series_set}
    if len(windows) != 1:
        raise ValueError(f"series windows differ: {sorted(windows)}")
    if horizon is None:
        horizon = max(s.end_t for s in series_set)
    if horizon < max(s.end_t for s in series_set):
        raise ValueError("horizon shorter than the longest series")
    padded = [pad_series(s, horizon) for s in series_set]
    return np.stack([p.values for p in padded]), stride, horizon, windows.pop()


def _ids_provenance(series_set: list[ScoreSeries], extra: str = "") -> str:
    ids = [s.rollout_id for s in series_set]
    tag = f"M={len(ids)} ids_hash={config_hash({'ids': ids})}"
    return f"{tag} {extra}".strip()


def cp_constant(
    series_set: list[ScoreSeries],
    delta: float,
    horizon: int | None = None,
) -> ThresholdProfile:
    """Conformal quantile of per-rollout maximum scores, as a constant."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not series_set:
        raise ValueError("empty calibration series set")
    for s in series_set:
        s.validate()
    if len({(s.stride, s.window) for s in series_set}) != 1:
        raise ValueError("calibration series must share stride and window")
    stride = series_set[0].stride
    if horizon is None:
        horizon = max(s.end_t for s in series_set)
    scores = np.sort(np.array([float(np.max(s.values)) for s in series_set]))
    m = scores.shape[0]
    k = conformal_rank(m, delta)
    gamma = float(scores[k - 1]) if k <= m else float("inf")
    profile = ThresholdProfile(
        scheme="constant",
        delta=delta,
        stride=stride,
        horizon=horizon,
        value=gamma,
        window=series_set[0].window,
        provenance=_ids_provenance(series_set, f"rank={k}"),
    )
    profile.validate()
    return profile


def _resolve_modulation(
    modulation: float | np.ndarray | None, n_grid: int, horizon: int
) -> np.ndarray:
    if modulation is None:
        # the default constant modulation 1/T
        s = np.full(n_grid, 1.0 / max(horizon, 1))
    elif np.isscalar(modulation):
        s = np.full(n_grid, float(modulation))
    else:
        s = np.asarray(modulation, dtype=np.float64)
        if s.shape != (n_grid,):
            raise ValueError(f"modulation must have {n_grid} entries, got {s.shape}")
    if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
        raise ValueError("modulation must be strictly positive and finite")
    return s


def cp_band_from_split(
    mean_set: list[ScoreSeries],
    band_set: list[ScoreSeries],
    delta: float,
    modulation: float | np.ndarray | None = None,
    horizon: int | None = None,
) -> ThresholdProfile:
    """One-sided band from an explicit (mean, width) calibration split."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not mean_set or not band_set:
        raise ValueError("both calibration splits must be nonempty")
    grid, stride, horizon, window = _common_grid(list(mean_set) + list(band_set), horizon)
    m1 = len(mean_set)
    mu = grid[:m1].mean(axis=0)
    s = _resolve_modulation(modulation, grid.shape[1], horizon)
    deviations = np.max(np.abs(grid[m1:] - mu[None, :]) / s[None, :], axis=1)
    m2 = deviations.shape[0]
    k = conformal_rank(m2, delta)
    ks = float(np.sort(deviations)[k - 1]) if k <= m2 else float("inf")
    profile = ThresholdProfile(
        scheme="band",
        delta=delta,
        stride=stride,
        horizon=horizon,
        values=mu + ks * s,
        window=window,
        provenance=_ids_provenance(
            list(mean_set) + list(band_set), f"M1={m1} M2={m2} rank={k}"
        ),
    )
    profile.validate()
    return profile


def cp_band(
    series_set: list[ScoreSeries],
    delta: float,
    split_seed: int = 0,
    modulation: float | np.ndarray | None = None,
    horizon: int | None = None,
) -> ThresholdProfile:
    """One-sided band with a seeded half/half calibration split."""
    m = len(series_set)
    if m < 2:
        raise ValueError(f"band calibration needs at least 2 rollouts, got {m}")
    perm = derive_rng("band-split", split_seed, m).permutation(m)
    half = m // 2
    mean_set = [series_set[i] for i in sorted(perm[:half].tolist())]
    band_set = [series_set[i] for i in sorted(perm[half:].tolist())]
    return cp_band_from_split(mean_set, band_set, delta, modulation, horizon)


def time_varying(
    series_set: list[ScoreSeries],
    delta: float,
    variant: str = "gaussian",
    horizon: int | None = None,
) -> ThresholdProfile:
    """Pointwise thresholds: Gaussian mu + z*sigma or the empirical quantile."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if variant not in ("gaussian", "quantile"):
        raise ValueError(f"variant must be 'gaussian' or 'quantile', got {variant!r}")
    grid, stride, horizon, window = _common_grid(series_set, horizon)
    m = grid.shape[0]
    if variant == "gaussian":
        if m < 2:
            raise ValueError("gaussian variant needs at least 2 rollouts")
        mu = grid.mean(axis=0)
        sigma = grid.std(axis=0, ddof=1)
        values = mu + normal_quantile(1.0 - delta) * sigma
    else:
        k = math.ceil(m * (1.0 - delta))
        values = np.sort(grid, axis=0)[k - 1]
    profile = ThresholdProfile(
        scheme=f"tvar-{variant}",
        delta=delta,
        stride=stride,
        horizon=horizon,
        values=values,
        window=window,
        provenance=_ids_provenance(series_set, f"variant={variant}"),
    )
    profile.validate()
    return profile


def _profile_to_json(p: ThresholdProfile) -> dict:
    return {
        "scheme": p.scheme,
        "delta": p.delta,
        "stride": p.stride,
        "horizon": p.horizon,
        "value": p.value,
        "values": p.values.tolist() if p.values is not None else None,
        "window": p.window,
        "provenance": p.provenance,
    }


def _profile_from_json(obj: dict) -> ThresholdProfile:
    values = obj.get("values")
    p = ThresholdProfile(
        scheme=obj["scheme"],
        delta=float(obj["delta"]),
        stride=int(obj["stride"]),
        horizon=int(obj["horizon"]),
        value=None if obj.get("value") is None else float(obj["value"]),
        values=None if values is None else np.asarray(values, dtype=np.float64),
        window=int(obj.get("window", 1)),
        provenance=obj.get("provenance", ""),
    )
    p.validate()
    return p


@dataclass(eq=False)
class ProfileFile:
    """On-disk bundle: one profile per score kind plus the fitted bin config."""

    profiles: dict[str, ThresholdProfile]
    ace: AceConfig | None = None
    seed: int | None = None
    provenance: str = ""


def save_profiles(bundle: ProfileFile, path: str | Path) -> None:
    doc = {
        "kind": "threshold-profiles",
        "schema_version": PROFILE_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": bundle.seed,
        "provenance": bundle.provenance,
        "profiles": {name: _profile_to_json(p) for name, p in bundle.profiles.items()},
        "ace": None
        if bundle.ace is None
        else {
            "alpha": bundle.ace.alpha,
            "ranges": bundle.ace.ranges.tolist(),
            "floored_dims": list(bundle.ace.floored_dims),
        },
    }
    # json's non-strict Infinity literal carries overflowed (+inf) thresholds
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_profiles(path: str | Path) -> ProfileFile:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "threshold-profiles":
        raise ValueError(f"{path} is not a threshold-profile file")
    if doc.get("schema_version") != PROFILE_SCHEMA_VERSION:
        raise ValueError(
            f"profile schema {doc.get('schema_version')} unsupported "
            f"(expected {PROFILE_SCHEMA_VERSION})"
        )
    ace = None
    if doc.get("ace") is not None:
        ace = AceConfig(
            alpha=float(doc["ace"]["alpha"]),
            ranges=np.asarray(doc["ace"]["ranges"], dtype=np.float64),
            floored_dims=tuple(int(i) for i in doc["ace"]["floored_dims"]),
        )
        ace.validate()
    return ProfileFile(
        profiles={name: _profile_from_json(p) for name, p in doc["profiles"].items()},
        ace=ace,
        seed=doc.get("seed"),
        provenance=doc.get("provenance", ""),
    )
