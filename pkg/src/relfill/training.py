"""Training loop, AdamW with per-group learning rates, checkpoints.

The prompt embeddings form their own optimizer group so the template's
continuous tokens can use a different learning rate than the rest of the
model. Batch order is derived from a PCG64 stream seeded by the run seed,
which makes whole training runs bit-reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as K
from .data import Instance, RelationSchema
from .model import (
    Architecture,
    ModelConfig,
    ModelError,
    ModelParams,
    _Drop,
    compute_grads,
    init_params,
    make_batch,
)
from .templates import TemplateConfig, VerbalizerMode, build_source, build_target
from .vocab import Vocab


@dataclass(frozen=True)
class OptimConfig:
    """AdamW settings; the defaults are the published fine-tuning values."""

    lr_model: float = 3e-5
    lr_prompt: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    eval_every: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ModelError("invalid training configuration")


class AdamW:
    """Decoupled-weight-decay Adam over named parameter tensors."""

    def __init__(self, params: ModelParams, cfg: OptimConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        cfg = self.cfg
        for name, tensor in self.params.items():
            g = grads[name]
            if g.shape != tensor.data.shape:
                raise ModelError(f"gradient shape mismatch for {name}")
            if g.size == 0:
                continue
            lr = cfg.lr_prompt if self.params.group_of(name) == "prompt" else cfg.lr_model
            K.adamw_update(
                tensor.data.ravel(),
                np.ascontiguousarray(g).ravel(),
                self.m[name].ravel(),
                self.v[name].ravel(),
                self.t,
                lr,
                cfg.betas[0],
                cfg.betas[1],
                cfg.eps,
                cfg.weight_decay,
            )


@dataclass
class TrainStats:
    epoch_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    dev_scores: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "grad_norms": self.grad_norms,
            "dev_scores": [[e, f] for e, f in self.dev_scores],
            "best_epoch": self.best_epoch,
            "wall_time": self.wall_time,
        }


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def build_pairs(
    instances: list[Instance],
    schema: RelationSchema,
    vocab: Vocab,
    template_cfg: TemplateConfig,
    mode: VerbalizerMode,
):
    return [
        (build_source(inst, template_cfg, vocab), build_target(inst, template_cfg, mode, schema, vocab))
        for inst in instances
    ]


def train(
    train_insts: list[Instance],
    dev_insts: list[Instance] | None,
    schema: RelationSchema,
    vocab: Vocab,
    template_cfg: TemplateConfig,
    model_cfg: ModelConfig,
    optim_cfg: OptimConfig,
    train_cfg: TrainConfig,
    mode: VerbalizerMode,
    seed: int,
) -> tuple[ModelParams, TrainStats]:
    """Train on the infilling objective; keep the best dev micro-F1 params.

    Without a dev split the final-epoch parameters are returned. Dev selection
    scores with guided shared-greedy decoding and no type filter, so it
    measures the parameters rather than the (parameter-independent) filter.
    """
    from . import scoring  # deferred: scoring depends on model, not on training
    from .metrics import micro_f1

    if not train_insts:
        raise ModelError("training split is empty")
    pairs = build_pairs(train_insts, schema, vocab, template_cfg, mode)
    params = init_params(model_cfg, template_cfg.n2, len(vocab), seed)
    opt = AdamW(params, optim_cfg)
    rng = np.random.Generator(np.random.PCG64(seed))
    drop = _Drop(model_cfg.dropout, rng) if model_cfg.dropout > 0 else None

    stats = TrainStats()
    best = None
    best_f1 = -1.0
    started = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        norms = []
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = [pairs[i] for i in order[lo : lo + train_cfg.batch_size]]
            batch = make_batch(chunk, vocab.bos_id, vocab.pad_id, model_cfg.architecture)
            loss, grads = compute_grads(params, batch, drop)
            opt.step(grads)
            losses.append(loss)
            norms.append(_global_norm(grads))
        stats.epoch_losses.append(float(np.mean(losses)))
        stats.grad_norms.append(float(np.mean(norms)))
        last = epoch == train_cfg.epochs - 1
        if dev_insts and ((epoch + 1) % train_cfg.eval_every == 0 or last):
            run_cfg = scoring.ScoringConfig(
                template=template_cfg, verbalizer=mode, guided=True
            )
            outcomes = scoring.predict_many(dev_insts, params, schema, vocab, run_cfg)
            preds = [o.predicted for o in outcomes]
            golds = [inst.relation for inst in dev_insts]
            _, _, f1 = micro_f1(preds, golds, negative=schema.negative_label)
            stats.dev_scores.append((epoch, f1))
            if f1 > best_f1:
                best_f1 = f1
                best = params.copy()
                stats.best_epoch = epoch
    stats.wall_time = time.perf_counter() - started
    if best is not None:
        return best, stats
    return params, stats


# --- checkpoints --------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    vocab_ref: str | None = None,
    extra: dict | None = None,
) -> None:
    """Write a versioned npz: a JSON header plus every parameter array (C order)."""
    cfg = params.cfg
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model": {
            "d": cfg.d,
            "layers": cfg.layers,
            "heads": cfg.heads,
            "ffn": cfg.ffn,
            "max_positions": cfg.max_positions,
            "architecture": cfg.architecture.value,
            "dropout": cfg.dropout,
        },
        "vocab_size": params.vocab_size,
        "n2": params.n2,
        "vocab_ref": vocab_ref,
        "param_names": params.names(),
        "extra": extra or {},
    }
    arrays = {f"param/{name}": t.data for name, t in params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    with np.load(path) as payload:
        meta = json.loads(bytes(payload["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {meta.get('format_version')}")
        mc = meta["model"]
        cfg = ModelConfig(
            d=mc["d"],
            layers=mc["layers"],
            heads=mc["heads"],
            ffn=mc["ffn"],
            max_positions=mc["max_positions"],
            architecture=Architecture(mc["architecture"]),
            dropout=mc["dropout"],
        )
        from .autograd import Tensor

        tensors = {
            name: Tensor(np.array(payload[f"param/{name}"], dtype=np.float64), requires_grad=True)
            for name in meta["param_names"]
        }
    return ModelParams(cfg, meta["vocab_size"], meta["n2"], tensors), meta
