"""Rollout trace data model, newline-delimited JSON serialization, and splits.

A trace file holds one JSON object per line, each describing a full policy
rollout::

    {"id": str, "outcome": "success"|"fail", "distribution": "id"|"ood",
     "h": int, "T_max": int,
     "steps": [{"t": int, "embedding": [float...], "actions": [[[float...]...]...]}]}

``actions`` is a B x H x D nested array: B sampled chunks, H prediction steps
per chunk, D action dimensions (task/Cartesian units). Files written by this
package carry an optional first line ``{"kind": "trace-header", ...}`` with
provenance (tool version, seed, config hash); files without it load fine.

All numbers are 64-bit floats serialized via ``repr``, so a load/save round
trip is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .util import TOOL_VERSION, derive_rng

TRACE_SCHEMA_VERSION = 1

OUTCOMES = ("success", "fail")
DISTRIBUTIONS = ("id", "ood")


class TraceError(ValueError):
    """Malformed or internally inconsistent trace data."""


@dataclass(frozen=True, eq=False)
class PolicyStep:
    """One replanning instant: observation embedding plus sampled chunk batch.

    ``t`` is the policy timestep (a multiple of the execution stride),
    ``embedding`` the E-vector the policy conditioned on, ``actions`` the
    B x H x D batch of chunks sampled at this step.
    """

    t: int
    embedding: np.ndarray
    actions: np.ndarray

    @property
    def batch(self) -> int:
        return self.actions.shape[0]

    @property
    def chunk_len(self) -> int:
        return self.actions.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[2]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[0]


@dataclass(eq=False)
class Rollout:
    """One episode: ordered policy steps plus outcome/distribution labels."""

    id: str
    outcome: str
    distribution: str
    stride: int
    t_max: int
    steps: list[PolicyStep]

    @property
    def episode_len(self) -> int:
        """Last policy timestep reached (T')."""
        return self.steps[-1].t

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def is_fail(self) -> bool:
        return self.outcome == "fail"


@dataclass(eq=False)
class RolloutSet:
    """Immutable collection of rollouts sharing dims, stride, and horizon."""

    rollouts: list[Rollout]
    embed_dim: int
    stride: int
    chunk_len: int
    action_dim: int
    t_max: int
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.rollouts)

    def __iter__(self):
        return iter(self.rollouts)

    def ids(self) -> list[str]:
        return [r.id for r in self.rollouts]

    def subset(self, rollouts: Iterable[Rollout], provenance: str | None = None) -> "RolloutSet":
        return RolloutSet(
            rollouts=list(rollouts),
            embed_dim=self.embed_dim,
            stride=self.stride,
            chunk_len=self.chunk_len,
            action_dim=self.action_dim,
            t_max=self.t_max,
            provenance=self.provenance if provenance is None else provenance,
        )


def _check_finite(arr: np.ndarray, what: str, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise TraceError(f"non-finite value in {what} ({where})")


def validate_rollout(r: Rollout, where: str = "") -> None:
    ctx = where or f"rollout {r.id!r}"
    if r.outcome not in OUTCOMES:
        raise TraceError(f"bad outcome {r.outcome!r} ({ctx})")
    if r.distribution not in DISTRIBUTIONS:
        raise TraceError(f"bad distribution {r.distribution!r} ({ctx})")
    if r.stride < 1:
        raise TraceError(f"stride must be >= 1 ({ctx})")
    if not r.steps:
        raise TraceError(f"rollout has no steps ({ctx})")
    first = r.steps[0]
    if first.t != 0:
        raise TraceError(f"first step must be at t=0, got t={first.t} ({ctx})")
    if first.embedding.ndim != 1 or first.actions.ndim != 3:
        raise TraceError(f"bad embedding/actions rank ({ctx})")
    b, hh, d = first.actions.shape
    e = first.embedding.shape[0]
    if b < 2:
        raise TraceError(f"need at least 2 sampled chunks per step, got B={b} ({ctx})")
    if hh < 1 or d < 1 or e < 1:
        raise TraceError(f"dims must be positive, got H={hh} D={d} E={e} ({ctx})")
    for i, s in enumerate(r.steps):
        if s.t != i * r.stride:
            raise TraceError(
                f"steps must advance by the stride: step {i} has t={s.t}, "
                f"expected {i * r.stride} ({ctx})"
            )
        if s.embedding.shape != (e,) or s.actions.shape != (b, hh, d):
            raise TraceError(
                f"dimension mismatch at step {i}: embedding {s.embedding.shape}, "
                f"actions {s.actions.shape}, expected ({e},) and {(b, hh, d)} ({ctx})"
            )
        _check_finite(s.embedding, "embedding", f"{ctx}, step {i}")
        _check_finite(s.actions, "actions", f"{ctx}, step {i}")
    if r.episode_len > r.t_max:
        raise TraceError(f"episode length {r.episode_len} exceeds T_max {r.t_max} ({ctx})")


def validate_set(rset: RolloutSet) -> None:
    seen: set[str] = set()
    for r in rset.rollouts:
        validate_rollout(r)
        if r.id in seen:
            raise TraceError(f"duplicate rollout id {r.id!r}")
        seen.add(r.id)
        if r.stride != rset.stride or r.t_max != rset.t_max:
            raise TraceError(
                f"rollout {r.id!r} has (h={r.stride}, T_max={r.t_max}), "
                f"dataset requires (h={rset.stride}, T_max={rset.t_max})"
            )
        s0 = r.steps[0]
        if (s0.embed_dim, s0.chunk_len, s0.action_dim) != (
            rset.embed_dim,
            rset.chunk_len,
            rset.action_dim,
        ):
            raise TraceError(
                f"rollout {r.id!r} dims (E={s0.embed_dim}, H={s0.chunk_len}, "
                f"D={s0.action_dim}) differ from dataset "
                f"(E={rset.embed_dim}, H={rset.chunk_len}, D={rset.action_dim})"
            )


def make_rollout_set(rollouts: list[Rollout], provenance: str = "") -> RolloutSet:
    """Build and validate a set, deriving shared metadata from the rollouts."""
    if not rollouts:
        raise TraceError("no rollouts")
    s0 = rollouts[0].steps[0]
    rset = RolloutSet(
        rollouts=rollouts,
        embed_dim=s0.embed_dim,
        stride=rollouts[0].stride,
        chunk_len=s0.chunk_len,
        action_dim=s0.action_dim,
        t_max=max(r.t_max for r in rollouts),
        provenance=provenance,
    )
    validate_set(rset)
    return rset


def _parse_record(obj: dict, line_no: int) -> Rollout:
    try:
        steps = []
        for raw in obj["steps"]:
            steps.append(
                PolicyStep(
                    t=int(raw["t"]),
                    embedding=np.asarray(raw["embedding"], dtype=np.float64),
                    actions=np.asarray(raw["actions"], dtype=np.float64),
                )
            )
        return Rollout(
            id=str(obj["id"]),
            outcome=str(obj["outcome"]),
            distribution=str(obj["distribution"]),
            stride=int(obj["h"]),
            t_max=int(obj["T_max"]),
            steps=steps,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"malformed record at line {line_no}: {exc}") from exc


def load_rollouts(path: str | Path) -> RolloutSet:
    """Load and fully validate a trace file.

    Raises TraceError with the offending line number for malformed records,
    dimension mismatches, non-finite values, or duplicate ids.
    """
    path = Path(path)
    rollouts: list[Rollout] = []
    provenance = ""
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"invalid JSON at line {line_no}: {exc}") from exc
            if not isinstance(obj, dict):
                raise TraceError(f"expected a JSON object at line {line_no}")
            if obj.get("kind") == "trace-header":
                if line_no != 1:
                    raise TraceError(f"trace-header must be the first line, found at {line_no}")
                provenance = str(obj.get("provenance", ""))
                continue
            r = _parse_record(obj, line_no)
            try:
                validate_rollout(r)
            except TraceError as exc:
                raise TraceError(f"line {line_no}: {exc}") from exc
            rollouts.append(r)
    if not rollouts:
        raise TraceError(f"no rollouts in {path}")
    return make_rollout_set(rollouts, provenance=provenance)


def _rollout_to_json(r: Rollout) -> str:
    obj = {
        "id": r.id,
        "outcome": r.outcome,
        "distribution": r.distribution,
        "h": r.stride,
        "T_max": r.t_max,
        "steps": [
            {
                "t": s.t,
                "embedding": s.embedding.tolist(),
                "actions": s.actions.tolist(),
            }
            for s in r.steps
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def save_rollouts(rset: RolloutSet, path: str | Path) -> None:
    """Write the set as newline-delimited JSON, header line first."""
    path = Path(path)
    header = {
        "kind": "trace-header",
        "schema_version": TRACE_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "provenance": rset.provenance,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for r in rset.rollouts:
            fh.write(_rollout_to_json(r) + "\n")


def filter_rollouts(
    rset: RolloutSet,
    outcome: str | None = None,
    distribution: str | None = None,
) -> RolloutSet:
    """Label-filtered view; selection order follows the input set."""
    picked = [
        r
        for r in rset.rollouts
        if (outcome is None or r.outcome == outcome)
        and (distribution is None or r.distribution == distribution)
    ]
    return rset.subset(picked)


def split_calibration(rset: RolloutSet, m: int, seed: int) -> tuple[RolloutSet, RolloutSet]:
    """Draw m successful in-distribution rollouts for calibration.

    Sampling is uniform without replacement and a pure function of
    (rset, m, seed); the remainder (including all failures and OOD rollouts)
    goes to the held-out set.
    """
    if m < 0:
        raise TraceError("m must be >= 0")
    eligible = [
        i
        for i, r in enumerate(rset.rollouts)
        if r.outcome == "success" and r.distribution == "id"
    ]
    if len(eligible) < m:
        raise TraceError(
            f"need {m} successful in-distribution rollouts, only {len(eligible)} available"
        )
    rng = derive_rng("split-calibration", seed, len(rset.rollouts), m)
    chosen = set(rng.choice(len(eligible), size=m, replace=False).tolist()) if m else set()
    chosen_idx = {eligible[i] for i in chosen}
    calib = [r for i, r in enumerate(rset.rollouts) if i in chosen_idx]
    heldout = [r for i, r in enumerate(rset.rollouts) if i not in chosen_idx]
    return (
        rset.subset(calib, provenance=f"{rset.provenance} [calibration m={m} seed={seed}]"),
        rset.subset(heldout, provenance=f"{rset.provenance} [heldout m={m} seed={seed}]"),
    )
