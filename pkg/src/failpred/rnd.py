"""Random network distillation over observation embeddings.

A frozen, randomly initialized target net and a slightly deeper trainable
predictor net map embeddings to an m-dimensional feature space; the score of
an embedding is the L2 distance between the two outputs. The predictor is
trained to minimize the mean score on successful in-distribution data, so the
distance stays small where the data lived and grows on novel embeddings.

Full-size hidden widths are 1024/2048/4096 (target) plus 2048/1024 extra
predictor layers; ``width_scale`` shrinks them proportionally for desk-scale
runs.
"""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mlp import (
    AdamW,
    MlpSpec,
    Params,
    copy_params,
    cosine_lr,
    forward,
    forward_cached,
    backward,
    init_params,
)
from .util import TOOL_VERSION, config_hash, derive_rng

CHECKPOINT_SCHEMA_VERSION = 1

TARGET_HIDDEN = (1024, 2048, 4096)
EXTRA_PREDICTOR_HIDDEN = (2048, 1024)
DEFAULT_OUT_DIM = 256


def _scaled(widths: tuple[int, ...], scale: float) -> tuple[int, ...]:
    return tuple(max(1, int(round(w * scale))) for w in widths)


def target_spec(embed_dim: int, out_dim: int, width_scale: float = 1.0) -> MlpSpec:
    hidden = _scaled(TARGET_HIDDEN, width_scale)
    widths = (embed_dim, *hidden, out_dim)
    # leaky ReLU after every layer but the last
    acts = ("leaky_relu",) * len(hidden) + ("none",)
    return MlpSpec(widths=widths, activations=acts)


def predictor_spec(embed_dim: int, out_dim: int, width_scale: float = 1.0) -> MlpSpec:
    """Mirrors the target's layers, then two extra ReLU layers before the head."""
    mirrored = _scaled(TARGET_HIDDEN, width_scale)
    extra = _scaled(EXTRA_PREDICTOR_HIDDEN, width_scale)
    widths = (embed_dim, *mirrored, *extra, out_dim)
    acts = ("leaky_relu",) * len(mirrored) + ("relu",) * len(extra) + ("none",)
    return MlpSpec(widths=widths, activations=acts)


@dataclass(eq=False)
class RndModel:
    """Frozen target plus trainable predictor sharing input/output dims."""

    target_spec: MlpSpec
    predictor_spec: MlpSpec
    target: Params
    predictor: Params
    embed_dim: int
    out_dim: int
    seed: int
    width_scale: float = 1.0
    trained: bool = False


def _freeze(params: Params) -> Params:
    for w, b in params:
        w.setflags(write=False)
        b.setflags(write=False)
    return params


def init_rnd(
    embed_dim: int,
    out_dim: int = DEFAULT_OUT_DIM,
    seed: int = 0,
    width_scale: float = 1.0,
) -> RndModel:
    """Seeded init of both nets; the target is write-protected from birth."""
    if embed_dim < 1 or out_dim < 1:
        raise ValueError("embed_dim and out_dim must be >= 1")
    tspec = target_spec(embed_dim, out_dim, width_scale)
    pspec = predictor_spec(embed_dim, out_dim, width_scale)
    target = _freeze(init_params(tspec, derive_rng("rnd-target", seed)))
    predictor = init_params(pspec, derive_rng("rnd-predictor", seed))
    return RndModel(
        target_spec=tspec,
        predictor_spec=pspec,
        target=target,
        predictor=predictor,
        embed_dim=embed_dim,
        out_dim=out_dim,
        seed=seed,
        width_scale=width_scale,
    )


def rnd_score(model: RndModel, embedding: np.ndarray) -> float:
    """L2 distance between predictor and target outputs for one embedding."""
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != (model.embed_dim,):
        raise ValueError(f"expected embedding of shape ({model.embed_dim},), got {e.shape}")
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite embedding")
    x = e[None, :]
    diff = forward(model.predictor_spec, model.predictor, x) - forward(
        model.target_spec, model.target, x
    )
    return float(np.linalg.norm(diff[0]))


def rnd_scores(model: RndModel, embeddings: np.ndarray) -> np.ndarray:
    """Batched scores for an (N, E) array."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.embed_dim:
        raise ValueError(f"expected (N, {model.embed_dim}) embeddings, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite embeddings")
    diff = forward(model.predictor_spec, model.predictor, x) - forward(
        model.target_spec, model.target, x
    )
    return np.sqrt(np.sum(diff * diff, axis=1))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 250
    lr: float = 1e-4
    lr_schedule: str = "cosine"  # or "constant"
    weight_decay: float = 1e-5
    eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ValueError("batch_size >= 1, epochs >= 0, lr > 0 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def _score_loss_and_grad(
    model: RndModel, x: np.ndarray, predictor: Params
) -> tuple[float, Params]:
    """Mean L2 score over the batch and its gradient w.r.t. the predictor."""
    out_t = forward(model.target_spec, model.target, x)
    out_p, cache = forward_cached(model.predictor_spec, predictor, x)
    diff = out_p - out_t
    norms = np.sqrt(np.sum(diff * diff, axis=1))
    loss = float(np.mean(norms))
    # d mean(||diff_i||) / d out_p_i = diff_i / (N * ||diff_i||); zero at 0
    safe = np.where(norms > 0.0, norms, 1.0)
    grad_out = diff / (safe[:, None] * x.shape[0])
    grad_out[norms == 0.0] = 0.0
    return loss, backward(model.predictor_spec, predictor, cache, grad_out)


def batch_loss(model: RndModel, embeddings: np.ndarray) -> float:
    """Mean score over a dataset, without touching any weights."""
    return float(np.mean(rnd_scores(model, embeddings)))


def train_rnd(
    model: RndModel, embeddings: np.ndarray, cfg: TrainConfig
) -> tuple[RndModel, TrainHistory]:
    """Minibatch AdamW on the mean score; returns a new model, target untouched.

    Deterministic for a fixed cfg.seed: the train/val split and every epoch's
    shuffle come from one derived stream. Datasets smaller than the batch
    size fall back to full-batch steps.
    """
    cfg.validate()
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.embed_dim:
        raise ValueError(f"expected (N, {model.embed_dim}) embeddings, got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty embedding set")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite embeddings")

    rng = derive_rng("rnd-train", cfg.seed)
    n = x.shape[0]
    perm = rng.permutation(n)
    n_val = min(int(round(cfg.val_fraction * n)), n - 1)
    val = x[perm[:n_val]]
    train = x[perm[n_val:]]
    n_train = train.shape[0]
    bs = min(cfg.batch_size, n_train)

    predictor = copy_params(model.predictor)
    trained = RndModel(
        target_spec=model.target_spec,
        predictor_spec=model.predictor_spec,
        target=model.target,
        predictor=predictor,
        embed_dim=model.embed_dim,
        out_dim=model.out_dim,
        seed=model.seed,
        width_scale=model.width_scale,
        trained=cfg.epochs > 0 or model.trained,
    )
    history = TrainHistory()
    if cfg.epochs == 0:
        return trained, history

    opt = AdamW(
        predictor,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    for epoch in range(cfg.epochs):
        lr = (
            cosine_lr(cfg.lr, epoch, cfg.epochs)
            if cfg.lr_schedule == "cosine"
            else cfg.lr
        )
        order = rng.permutation(n_train)
        running = 0.0
        for start in range(0, n_train, bs):
            batch = train[order[start : start + bs]]
            loss, grads = _score_loss_and_grad(trained, batch, predictor)
            opt.step(predictor, grads, lr)
            running += loss * batch.shape[0]
        history.train_loss.append(running / n_train)
        history.val_loss.append(
            batch_loss(trained, val) if n_val else float("nan")
        )
    return trained, history


def _encode_params(params: Params) -> list[dict]:
    out = []
    for w, b in params:
        out.append(
            {
                "shape": list(w.shape),
                "w": base64.b64encode(np.ascontiguousarray(w, dtype="<f8").tobytes()).decode(),
                "b": base64.b64encode(np.ascontiguousarray(b, dtype="<f8").tobytes()).decode(),
            }
        )
    return out


def _decode_params(blobs: list[dict]) -> Params:
    params: Params = []
    for blob in blobs:
        shape = tuple(blob["shape"])
        w = np.frombuffer(base64.b64decode(blob["w"]), dtype="<f8").reshape(shape).copy()
        b = np.frombuffer(base64.b64decode(blob["b"]), dtype="<f8").copy()
        params.append((w, b))
    return params


def _spec_to_json(spec: MlpSpec) -> dict:
    return {
        "widths": list(spec.widths),
        "activations": list(spec.activations),
        "leaky_slope": spec.leaky_slope,
    }


def _spec_from_json(obj: dict) -> MlpSpec:
    return MlpSpec(
        widths=tuple(obj["widths"]),
        activations=tuple(obj["activations"]),
        leaky_slope=float(obj["leaky_slope"]),
    )


def save_checkpoint(
    model: RndModel,
    path: str | Path,
    train_cfg: TrainConfig | None = None,
    history: TrainHistory | None = None,
    provenance: str = "",
) -> None:
    """Single-file checkpoint; weights as base64 little-endian float64."""
    cfg_json = asdict(train_cfg) if train_cfg is not None else None
    doc = {
        "kind": "rnd-checkpoint",
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": model.seed,
        "embed_dim": model.embed_dim,
        "out_dim": model.out_dim,
        "width_scale": model.width_scale,
        "trained": model.trained,
        "target_spec": _spec_to_json(model.target_spec),
        "predictor_spec": _spec_to_json(model.predictor_spec),
        "target": _encode_params(model.target),
        "predictor": _encode_params(model.predictor),
        "train_config": cfg_json,
        "config_hash": config_hash(cfg_json) if cfg_json is not None else None,
        "loss_history": {
            "train": history.train_loss,
            "val": history.val_loss,
        }
        if history is not None
        else None,
        "provenance": provenance,
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> RndModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "rnd-checkpoint":
        raise ValueError(f"{path} is not an rnd checkpoint")
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema {doc.get('schema_version')} unsupported "
            f"(expected {CHECKPOINT_SCHEMA_VERSION})"
        )
    return RndModel(
        target_spec=_spec_from_json(doc["target_spec"]),
        predictor_spec=_spec_from_json(doc["predictor_spec"]),
        target=_freeze(_decode_params(doc["target"])),
        predictor=_decode_params(doc["predictor"]),
        embed_dim=int(doc["embed_dim"]),
        out_dim=int(doc["out_dim"]),
        seed=int(doc["seed"]),
        width_scale=float(doc["width_scale"]),
        trained=bool(doc["trained"]),
    )
