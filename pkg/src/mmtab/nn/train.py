"""Fine-tuning loop: slanted triangular schedule, layer-wise decay, AdamW,
early stopping and top-k checkpoint averaging."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import TrainingDiverged
from . import autograd as ag
from .model import Batch, TrainedNet, collate, link, logits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 5e-5
    warmup_fraction: float = 0.1
    batch_size: int = 128
    weight_decay: float = 1e-4
    epochs: int = 10
    layer_decay: float = 0.8
    checkpoints_to_average: int = 3
    patience: int = 3
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if not 0.0 < self.layer_decay <= 1.0:
            raise ValueError("layer_decay must lie in (0, 1]")
        if self.checkpoints_to_average < 1:
            raise ValueError("checkpoints_to_average must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Slanted triangular schedule: 0 -> peak over the warmup, then linearly back to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    # the peak must fall strictly before the last step so lr_at(total) is exactly 0
    warm = min(math.ceil(cfg.warmup_fraction * total_steps), total_steps - 1)
    if warm == 0:
        return 0.0
    if step <= warm:
        return cfg.peak_lr * step / warm
    return cfg.peak_lr * (total_steps - step) / (total_steps - warm)


def layer_multiplier(depth: int, tau: float) -> float:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return tau ** depth


class AdamW:
    """Adam with decoupled weight decay and per-parameter learning-rate scales."""

    def __init__(self, params: dict, scales: dict[str, float], weight_decay: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.scales = scales
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.last_lr: dict[str, float] = {}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            eff = lr * self.scales[k]
            self.last_lr[k] = eff
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.wd and p.data.ndim > 1:
                upd = upd + self.wd * p.data
            p.data -= eff * upd

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def average_checkpoints(snapshots: Sequence[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    if not snapshots:
        raise ValueError("no checkpoints to average")
    return {k: np.mean([s[k] for s in snapshots], axis=0) for k in snapshots[0]}


@dataclass
class EncodedRows:
    """Model-ready rows: merged token inputs, tabular matrices and targets."""
    merged: list
    numeric: np.ndarray
    categorical: np.ndarray
    y: np.ndarray | None = None

    def __len__(self):
        return len(self.merged)

    def batch(self, idx) -> Batch:
        return collate([self.merged[i] for i in idx], self.numeric[idx], self.categorical[idx])


def loss_fn(task: str):
    if task == "regression":
        return ag.mse
    if task == "binary":
        return lambda z, y: ag.binary_cross_entropy(z, y)
    return ag.cross_entropy


def predict_rows(net: TrainedNet, rows: EncodedRows, task: str, batch_size: int = 256) -> np.ndarray:
    outs = []
    for s in range(0, len(rows), batch_size):
        idx = np.arange(s, min(s + batch_size, len(rows)))
        outs.append(link(logits(net, rows.batch(idx)).data, task))
    if not outs:
        return np.zeros((0,) if task == "regression" else (0, max(net.config.output_dim, 2)))
    return np.concatenate(outs, axis=0)


def lr_scales(net: TrainedNet, tau: float) -> dict[str, float]:
    return {k: layer_multiplier(net.depth[k], tau) for k in net.params}


def train(net: TrainedNet, train_rows: EncodedRows, val_rows: EncodedRows | None, cfg: TrainConfig,
          metric: Callable[[np.ndarray, np.ndarray], float], task: str) -> TrainedNet:
    """Fit ``net`` in place and return it with ``final_params`` loaded.

    One snapshot per epoch is logged with its validation score; the final
    parameters are the elementwise mean of the best
    ``min(checkpoints_to_average, epochs run)`` snapshots.  Training stops once
    validation has not improved for ``cfg.patience`` epochs.
    """
    n = len(train_rows)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    opt = AdamW(net.params, lr_scales(net, cfg.layer_decay), cfg.weight_decay, cfg.adam_betas, cfg.adam_eps)
    lossf = loss_fn(task)
    best, since_best, step, lr = -math.inf, 0, 0, 0.0
    net.checkpoint_log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            batch = train_rows.batch(idx)
            opt.zero_grad()
            loss = lossf(logits(net, batch), train_rows.y[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged("non-finite loss", epoch=epoch, lr=lr)
            loss.backward()
            step += 1
            lr = lr_at(step, total, cfg)
            opt.step(lr)
        rows = val_rows if val_rows is not None and len(val_rows) else train_rows
        score = float(metric(rows.y, predict_rows(net, rows, task)))
        if not np.isfinite(score):
            raise TrainingDiverged("non-finite validation score", epoch=epoch, lr=lr)
        net.checkpoint_log.append((epoch, score, net.param_arrays()))
        log.debug("epoch %d score %.5f", epoch, score)
        if score > best:
            best, since_best = score, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    ranked = sorted(net.checkpoint_log, key=lambda c: (-c[1], c[0]))
    top = ranked[:min(cfg.checkpoints_to_average, len(ranked))]
    net.final_params = average_checkpoints([c[2] for c in top])
    net.load(net.final_params)
    return net
