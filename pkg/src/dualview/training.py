"""Training loop: accumulation, clipping, AdamW with warmup+cosine, selection."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from dualview.errors import ConfigError, InputError, NumericalError
from dualview.evaluation import METRICS, evaluate
from dualview.losses import LossConfig, combined_loss
from dualview.nn.optim import AdamW, clip_gradients, lr_schedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 2e-5
    weight_decay: float = 0.01
    warmup_fraction: float = 0.10
    max_grad_norm: float = 1.0
    batch_size: int = 8
    accumulation_steps: int = 1
    epochs: int = 3
    seed: int = 42
    loss: LossConfig = field(default_factory=LossConfig)
    eval_every: int = 0  # 0: evaluate at the end of every epoch
    selection_metric: str = "full_hit_at_k"
    k: int = 4

    def __post_init__(self):
        if self.batch_size < 1 or self.accumulation_steps < 1:
            raise ConfigError("batch_size and accumulation_steps must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.selection_metric not in METRICS:
            raise ConfigError(f"selection_metric must be one of {METRICS}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    best_state: dict
    best_metric: float | None
    best_step: int
    total_steps: int
    log: list[dict]


def accumulate_gradients(model, sets: Sequence, loss_cfg: LossConfig, weight: float):
    """Forward/backward over ``sets``; each query's gradient is scaled by ``weight``.

    Queries sharing a candidate count are batched together. Returns the
    per-query loss results in input order.
    """
    groups = defaultdict(list)
    for i, cs in enumerate(sets):
        groups[cs.n].append(i)
    results = [None] * len(sets)
    for n in sorted(groups):
        idx = groups[n]
        q = np.stack([sets[i].query_embedding for i in idx])
        docs = np.stack([sets[i].doc_embeddings for i in idx])
        out, cache = model.forward(q, docs)
        grads = np.zeros(out.s_fused.shape, dtype=np.float64)
        for row, i in enumerate(idx):
            res = combined_loss(out.s_fused[row], sets[i].labels, loss_cfg, warn=False)
            results[i] = res
            grads[row] = res.grad * weight
        model.backward(cache, grads)
    return results


def train(model, train_data: Sequence, val_data: Sequence | None = None,
          cfg: TrainConfig | None = None, log_path=None) -> TrainResult:
    """Trains ``model`` in place and leaves the selected weights loaded.

    ``model`` is anything exposing ``forward``/``backward``/``parameters``
    and ``rank`` (the dual-view model or the MLP baseline).
    """
    cfg = cfg or TrainConfig()
    train_data = list(train_data)
    if not train_data:
        raise InputError("training data is empty")
    val_data = list(val_data) if val_data else None

    params = model.parameters()
    opt = AdamW(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    per_step = cfg.batch_size * cfg.accumulation_steps
    steps_per_epoch = math.ceil(len(train_data) / per_step)
    total_steps = steps_per_epoch * cfg.epochs
    rng = np.random.default_rng(cfg.seed)

    entries: list[dict] = []
    best_state, best_metric, best_step = None, None, -1
    step = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def validate():
        nonlocal best_state, best_metric, best_step
        report = evaluate(model, val_data, cfg.k)
        metric = getattr(report, cfg.selection_metric)
        if best_metric is None or metric > best_metric:
            best_state, best_metric, best_step = model.state_dict(), metric, step
        return {m: getattr(report, m) for m in METRICS}

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_data))
            for start in range(0, len(order), per_step):
                chunk = [train_data[i] for i in order[start:start + per_step]]
                opt.zero_grad()
                results = []
                for m in range(0, len(chunk), cfg.batch_size):
                    results += accumulate_gradients(
                        model, chunk[m:m + cfg.batch_size], cfg.loss, 1.0 / len(chunk))
                loss = math.fsum(r.total for r in results) / len(results)
                if not math.isfinite(loss):
                    # no update has been applied yet, so current weights are the last good ones
                    raise NumericalError(f"non-finite loss {loss} at step {step}",
                                         last_good_state=model.state_dict())
                scale = clip_gradients(params.values(), cfg.max_grad_norm)
                lr = lr_schedule(step, total_steps, cfg.base_lr, cfg.warmup_fraction)
                opt.step(lr)
                step += 1
                entry = {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": loss,
                    "terms": {name: math.fsum(r.terms[name] for r in results) / len(results)
                              for name in results[0].terms},
                    "clip_scale": scale,
                }
                end_of_epoch = start + per_step >= len(order)
                if val_data and ((cfg.eval_every and step % cfg.eval_every == 0)
                                 or (not cfg.eval_every and end_of_epoch)
                                 or step == total_steps):
                    entry["val"] = validate()
                entries.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log.info("epoch %d done: loss %.4f", epoch, entries[-1]["loss"])
    finally:
        if log_fh:
            log_fh.close()

    if best_state is None:
        best_state, best_step = model.state_dict(), step
    else:
        model.load_state_dict(best_state)
    return TrainResult(best_state, best_metric, best_step, total_steps, entries)
