"""Runtime failure prediction for generative action-chunk policies.

Two complementary per-timestep signals, a distillation-based novelty score
on observation embeddings and a binned-entropy score on sampled action
chunks, are aggregated over short sliding windows, calibrated on a handful
of successful rollouts with conformal prediction, and combined into a single
runtime alarm with a bounded false-alarm probability.
"""
from .ace import AceConfig, ace_score, fit_ace_ranges, step_entropy
from .aggregate import ScoreSeries, raw_scores, score_rollout, window_sum
from .calibrate import (
    ProfileFile,
    ThresholdProfile,
    conformal_rank,
    cp_band,
    cp_band_from_split,
    cp_constant,
    load_profiles,
    normal_quantile,
    pad_series,
    save_profiles,
    time_varying,
)
from .detect import DetectionResult, Monitor, combine, decide_rollout, replay, threshold_decide
from .evaluate import (
    ConfusionCounts,
    EvalReport,
    MetricRecord,
    confusion_from_results,
    metrics,
    sweep,
)
from .rnd import (
    RndModel,
    TrainConfig,
    init_rnd,
    load_checkpoint,
    rnd_score,
    rnd_scores,
    save_checkpoint,
    train_rnd,
)
from .synth import LABELS, ScenarioConfig, generate_dataset, generate_rollout
from .trace import (
    PolicyStep,
    Rollout,
    RolloutSet,
    TraceError,
    filter_rollouts,
    load_rollouts,
    save_rollouts,
    split_calibration,
)
from .util import TOOL_VERSION

__version__ = TOOL_VERSION
