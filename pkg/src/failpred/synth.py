"""Synthetic rollouts from a multimodal stand-in policy.

The generator replaces a real robot stack for desk-scale verification. Action
batches are drawn from a mixture of well-separated Gaussian modes (discrete
behavior modes), embeddings from a unit Gaussian. Failure rollouts accumulate
an embedding drift and inflate the within-mode action spread from a
configurable onset, so both the observation- and the action-side detectors
have something real to find; setting ``embed_drift=0`` and
``entropy_inflation=1`` produces failures statistically indistinguishable
from successes (a null scenario for false-separation tests).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .trace import PolicyStep, Rollout, RolloutSet, validate_set
from .util import config_hash, derive_rng

LABELS = ("success_id", "success_ood", "fail_id", "fail_ood")

# Constant embedding offset applied to OOD rollouts; benign by construction
# (small against the unit base spread, never grows).
BENIGN_OOD_OFFSET = 0.5

# Common per-step wobble of the mode centers, relative to base_noise. Shifts
# whole batches without changing their spread.
CENTER_JITTER_FRACTION = 0.25

# Successful episodes end anywhere in the top fraction of the horizon.
MIN_LENGTH_FRACTION = 0.7


@dataclass(frozen=True)
class ScenarioConfig:
    """Shape and difficulty knobs for one synthetic task."""

    embed_dim: int = 16
    batch: int = 32
    chunk_len: int = 4
    action_dim: int = 2
    stride: int = 4
    max_len: int = 40
    n_modes: int = 2
    mode_separation: float = 4.0
    base_noise: float = 0.1
    embed_drift: float = 0.0
    entropy_inflation: float = 1.0
    failure_onset_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        positive = {
            "embed_dim": self.embed_dim,
            "chunk_len": self.chunk_len,
            "action_dim": self.action_dim,
            "stride": self.stride,
            "max_len": self.max_len,
        }
        for name, value in positive.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.batch < 2:
            raise ValueError(f"batch must be >= 2, got {self.batch}")
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        if not self.base_noise > 0:
            raise ValueError(f"base_noise must be > 0, got {self.base_noise}")
        if self.entropy_inflation < 1:
            raise ValueError(f"entropy_inflation must be >= 1, got {self.entropy_inflation}")
        if not 0.0 <= self.failure_onset_fraction <= 1.0:
            raise ValueError("failure_onset_fraction must lie in [0, 1]")
        if self.mode_separation < 0 or self.embed_drift < 0:
            raise ValueError("mode_separation and embed_drift must be >= 0")

    def hash(self) -> str:
        return config_hash(asdict(self))


def mode_centers(cfg: ScenarioConfig) -> np.ndarray:
    """Mode centers shared by every rollout of a scenario.

    Centers sit at 0, sep, 2*sep, ... along one seeded unit direction, so
    any two are at least ``mode_separation`` apart regardless of the action
    dimension.
    """
    rng = derive_rng("scenario-modes", cfg.seed)
    direction = rng.standard_normal(cfg.action_dim)
    direction /= np.linalg.norm(direction)
    offsets = np.arange(cfg.n_modes, dtype=np.float64) * cfg.mode_separation
    return offsets[:, None] * direction[None, :]


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_rollout(
    cfg: ScenarioConfig,
    label: str,
    seed: int,
    id: str | None = None,
) -> Rollout:
    """One rollout, deterministic in (cfg, label, seed)."""
    cfg.validate()
    if label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}, got {label!r}")
    outcome, distribution = label.split("_")
    failing = outcome == "fail"
    ood = distribution == "ood"

    centers = mode_centers(cfg)
    rng = derive_rng("rollout", cfg.seed, label, seed)

    grid = cfg.max_len // cfg.stride + 1
    min_steps = max(1, int(np.ceil(MIN_LENGTH_FRACTION * grid)))
    n_steps = int(rng.integers(min_steps, grid + 1))
    onset_t = int(np.floor(cfg.failure_onset_fraction * cfg.max_len))

    benign = BENIGN_OOD_OFFSET * _unit_vector(rng, cfg.embed_dim) if ood else 0.0
    drift_dir = _unit_vector(rng, cfg.embed_dim)

    steps: list[PolicyStep] = []
    for n in range(n_steps):
        t = n * cfg.stride
        in_failure = failing and t >= onset_t
        embedding = rng.standard_normal(cfg.embed_dim) + benign
        if in_failure:
            steps_since = (t - onset_t) // cfg.stride + 1
            embedding = embedding + cfg.embed_drift * steps_since * drift_dir
        modes = rng.integers(0, cfg.n_modes, size=cfg.batch)
        jitter = CENTER_JITTER_FRACTION * cfg.base_noise * rng.standard_normal(cfg.action_dim)
        spread = cfg.base_noise * (cfg.entropy_inflation if in_failure else 1.0)
        noise = spread * rng.standard_normal((cfg.batch, cfg.chunk_len, cfg.action_dim))
        actions = centers[modes][:, None, :] + jitter[None, None, :] + noise
        steps.append(PolicyStep(t=t, embedding=embedding, actions=actions))

    return Rollout(
        id=id if id is not None else f"{label}-{seed}",
        outcome=outcome,
        distribution=distribution,
        stride=cfg.stride,
        t_max=cfg.max_len,
        steps=steps,
    )


def generate_dataset(
    cfg: ScenarioConfig,
    counts: Mapping[str, int],
    seed: int,
) -> RolloutSet:
    """Concatenate rollouts with per-rollout seeds derived from *seed*.

    Label counts are honored exactly; an all-zero counts mapping yields an
    empty (but fully typed) set.
    """
    cfg.validate()
    for label in counts:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r} in counts")
    rollouts: list[Rollout] = []
    for label in LABELS:
        for i in range(int(counts.get(label, 0))):
            child = derive_rng("dataset-seed", seed, label, i).integers(0, 2**63)
            # the seed is part of the id: rollouts from different generator
            # runs must not alias across files
            rollouts.append(
                generate_rollout(cfg, label, int(child), id=f"{label}-s{seed}-{i:05d}")
            )
    rset = RolloutSet(
        rollouts=rollouts,
        embed_dim=cfg.embed_dim,
        stride=cfg.stride,
        chunk_len=cfg.chunk_len,
        action_dim=cfg.action_dim,
        t_max=cfg.max_len,
        provenance=f"synth seed={seed} cfg={cfg.hash()}",
    )
    validate_set(rset)
    return rset
