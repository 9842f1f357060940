"""Failure-prediction metrics and the full evaluation sweep.

Failed rollouts are positives, successful ones negatives. Beyond the
balanced accuracy ``(TPR + TNR) / 2`` we report the balanced timestep-wise
accuracy (TWA), in which a true positive detected at timestep t of a
horizon-T task contributes ``1 - t/T`` instead of 1, rewarding earlier
correct alarms; TWA therefore never exceeds the balanced accuracy. The
normalized detection time (DT) is the mean of ``t*/T`` over true positives
and is marked unreliable whenever TPR or TNR drops below 0.4, where the
detector either misses nearly everything or flags nearly everything.

:func:`sweep` runs the grid protocol: for every (threshold scheme, window
w, delta) cell it calibrates both score thresholds on the calibration set,
applies the combined detector to the evaluation set, and records metrics.
Cells are averaged over the delta grid per (scheme, w) first, and the best
(scheme, w) is then selected by averaged TWA.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .ace import AceConfig
from .aggregate import ScoreSeries, raw_scores, window_sum
from .calibrate import ThresholdProfile, cp_band, cp_constant, time_varying
from .detect import DetectionResult, combine, threshold_decide
from .rnd import RndModel
from .trace import RolloutSet
from .util import TOOL_VERSION

# Evaluation grid defaults: quantile levels 1-delta from 0.90 to 0.99.
DEFAULT_DELTAS = tuple(round(0.01 * i, 2) for i in range(1, 11))
DEFAULT_WINDOWS = tuple(range(1, 51))
DEFAULT_SCHEMES = ("constant", "band", "tvar-gaussian")

DT_RELIABILITY_FLOOR = 0.4

CSV_COLUMNS = ("scheme", "w", "delta", "tpr", "tnr", "acc", "twa", "dt", "dt_unreliable_flag")


@dataclass
class ConfusionCounts:
    """Rollout-level confusion counts plus the TP detection fractions t*/T."""

    p: int
    n: int
    tp: int
    fp: int
    tn: int
    fn: int
    detection_fractions: tuple[float, ...] = ()

    def validate(self) -> None:
        counts = (self.p, self.n, self.tp, self.fp, self.tn, self.fn)
        if any(c < 0 for c in counts):
            raise ValueError("counts must be nonnegative")
        if self.tp + self.fn != self.p or self.fp + self.tn != self.n:
            raise ValueError("counts are inconsistent: TP+FN must equal P, FP+TN must equal N")
        if len(self.detection_fractions) != self.tp:
            raise ValueError("need one detection fraction per true positive")
        if any(not 0.0 <= f <= 1.0 for f in self.detection_fractions):
            raise ValueError("detection fractions must lie in [0, 1]")


def confusion_from_results(
    results: Iterable[DetectionResult], rollouts: RolloutSet
) -> ConfusionCounts:
    """Pair detector outputs with rollout outcome labels."""
    outcome = {r.id: r.is_fail for r in rollouts}
    p = n = tp = fp = tn = fn = 0
    fractions: list[float] = []
    for res in results:
        failed = outcome[res.rollout_id]
        if failed:
            p += 1
            if res.flagged:
                tp += 1
                fractions.append(res.normalized_dt)
            else:
                fn += 1
        else:
            n += 1
            if res.flagged:
                fp += 1
            else:
                tn += 1
    counts = ConfusionCounts(
        p=p, n=n, tp=tp, fp=fp, tn=tn, fn=fn, detection_fractions=tuple(fractions)
    )
    counts.validate()
    return counts


@dataclass
class MetricRecord:
    """Rates are None when their side of the confusion table is empty."""

    tpr: float | None
    tnr: float | None
    accuracy: float | None
    twa: float | None
    dt: float | None
    dt_unreliable: bool


def metrics(counts: ConfusionCounts) -> MetricRecord:
    counts.validate()
    tpr = counts.tp / counts.p if counts.p else None
    tnr = counts.tn / counts.n if counts.n else None
    early_credit = sum(1.0 - f for f in counts.detection_fractions)
    twa_pos = early_credit / counts.p if counts.p else None
    accuracy = 0.5 * (tpr + tnr) if tpr is not None and tnr is not None else None
    twa = 0.5 * (twa_pos + tnr) if twa_pos is not None and tnr is not None else None
    dt = (
        sum(counts.detection_fractions) / counts.tp
        if counts.tp
        else None
    )
    dt_unreliable = (tpr is not None and tpr < DT_RELIABILITY_FLOOR) or (
        tnr is not None and tnr < DT_RELIABILITY_FLOOR
    )
    return MetricRecord(
        tpr=tpr, tnr=tnr, accuracy=accuracy, twa=twa, dt=dt, dt_unreliable=dt_unreliable
    )


@dataclass
class SweepCell:
    scheme: str
    window: int
    delta: float | None  # None marks a delta-averaged cell
    record: MetricRecord


@dataclass
class EvalReport:
    cells: list[SweepCell] = field(default_factory=list)
    averaged: list[SweepCell] = field(default_factory=list)
    best: SweepCell | None = None

    def to_csv(self) -> str:
        """Per-delta cells, then delta-averaged cells, best cell in the header."""
        buf = io.StringIO()
        best = self.best
        buf.write(
            "# failure-prediction sweep (tool %s); metrics averaged over delta per "
            "(scheme, w) first, best cell then selected by averaged TWA\n" % TOOL_VERSION
        )
        if best is not None:
            buf.write(
                "# best: scheme=%s w=%d twa=%s\n"
                % (best.scheme, best.window, _fmt(best.record.twa))
            )
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in list(self.cells) + list(self.averaged):
            r = cell.record
            writer.writerow(
                [
                    cell.scheme,
                    cell.window,
                    "avg" if cell.delta is None else repr(cell.delta),
                    _fmt(r.tpr),
                    _fmt(r.tnr),
                    _fmt(r.accuracy),
                    _fmt(r.twa),
                    _fmt(r.dt),
                    int(r.dt_unreliable),
                ]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def average_over_delta(cells: Sequence[SweepCell]) -> MetricRecord:
    """Mean of each metric across delta cells; DT over cells where defined."""
    tpr = _mean_or_none([c.record.tpr for c in cells])
    tnr = _mean_or_none([c.record.tnr for c in cells])
    return MetricRecord(
        tpr=tpr,
        tnr=tnr,
        accuracy=_mean_or_none([c.record.accuracy for c in cells]),
        twa=_mean_or_none([c.record.twa for c in cells]),
        dt=_mean_or_none([c.record.dt for c in cells]),
        dt_unreliable=(tpr is not None and tpr < DT_RELIABILITY_FLOOR)
        or (tnr is not None and tnr < DT_RELIABILITY_FLOOR),
    )


def _calibration_profiles(
    scheme: str,
    obs_series: list[ScoreSeries],
    act_series: list[ScoreSeries],
    delta: float,
    horizon: int,
    band_split_seed: int,
) -> tuple[ThresholdProfile, ThresholdProfile]:
    if scheme == "constant":
        return (
            cp_constant(obs_series, delta, horizon=horizon),
            cp_constant(act_series, delta, horizon=horizon),
        )
    if scheme == "band":
        return (
            cp_band(obs_series, delta, split_seed=band_split_seed, horizon=horizon),
            cp_band(act_series, delta, split_seed=band_split_seed, horizon=horizon),
        )
    if scheme in ("tvar-gaussian", "tvar-quantile"):
        variant = scheme.split("-", 1)[1]
        return (
            time_varying(obs_series, delta, variant=variant, horizon=horizon),
            time_varying(act_series, delta, variant=variant, horizon=horizon),
        )
    raise ValueError(f"unknown scheme {scheme!r}")


def sweep(
    dataset: RolloutSet,
    calib: RolloutSet,
    model: RndModel,
    ace_cfg: AceConfig,
    schemes: Sequence[str] = DEFAULT_SCHEMES,
    windows: Sequence[int] = DEFAULT_WINDOWS,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    mode: str = "and",
    band_split_seed: int = 0,
) -> EvalReport:
    """Grid evaluation over (scheme, window, delta).

    The calibration set must contain only successful in-distribution
    rollouts; both score windows are tied (w_obs = w_act = w) across the
    grid. Cells whose conformal rank overflows get +inf thresholds and
    simply report TPR 0 rather than being dropped.
    """
    if not schemes or not list(windows) or not deltas:
        raise ValueError("schemes, windows, and deltas must be nonempty")
    if len(calib) == 0:
        raise ValueError("empty calibration set")
    for r in calib:
        if r.outcome != "success" or r.distribution != "id":
            raise ValueError(
                f"calibration rollout {r.id!r} is not a successful "
                f"in-distribution rollout"
            )
    horizon = max(dataset.t_max, calib.t_max)

    calib_raw = [raw_scores(r, model, ace_cfg) for r in calib]
    data_raw = [raw_scores(r, model, ace_cfg) for r in dataset]

    report = EvalReport()
    grouped: dict[tuple[str, int], list[SweepCell]] = {}
    for w in windows:
        calib_obs = [window_sum(obs, w) for obs, _ in calib_raw]
        calib_act = [window_sum(act, w) for _, act in calib_raw]
        data_obs = [window_sum(obs, w) for obs, _ in data_raw]
        data_act = [window_sum(act, w) for _, act in data_raw]
        for scheme in schemes:
            for delta in deltas:
                profile_obs, profile_act = _calibration_profiles(
                    scheme, calib_obs, calib_act, delta, horizon, band_split_seed
                )
                results = [
                    combine(
                        threshold_decide(obs, profile_obs),
                        threshold_decide(act, profile_act),
                        mode,
                    )
                    for obs, act in zip(data_obs, data_act)
                ]
                counts = confusion_from_results(results, dataset)
                cell = SweepCell(scheme=scheme, window=w, delta=delta, record=metrics(counts))
                report.cells.append(cell)
                grouped.setdefault((scheme, w), []).append(cell)

    for (scheme, w), cells in grouped.items():
        report.averaged.append(
            SweepCell(scheme=scheme, window=w, delta=None, record=average_over_delta(cells))
        )
    report.best = max(
        report.averaged,
        key=lambda c: (c.record.twa if c.record.twa is not None else float("-inf")),
    )
    return report
