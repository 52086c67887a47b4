"""Fully connected ReLU network for tabular features (one-hot categoricals)."""
from __future__ import annotations

import math

import numpy as np

from ..frame import BINARY, REGRESSION
from ..nn import autograd as ag
from ..nn.autograd import Tensor
from ..nn.train import AdamW, TrainConfig, lr_at


class TabMLP:
    def __init__(self, hidden=(128, 64), epochs: int = 10, batch_size: int = 128, peak_lr: float = 1e-2,
                 weight_decay: float = 1e-4, holdout: float = 0.1, patience: int = 3, seed: int = 0):
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.weight_decay = weight_decay
        self.holdout = holdout
        self.patience = patience
        self.seed = seed

    def _init(self, n_in, n_out, rng):
        sizes = (n_in,) + self.hidden + (n_out,)
        params = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            # He init for the ReLU layers
            params[f"w{i}"] = Tensor(rng.normal(0.0, math.sqrt(2.0 / max(a, 1)), (a, b)), requires_grad=True)
            params[f"b{i}"] = Tensor(np.zeros(b), requires_grad=True)
        return params

    def _forward(self, params, X):
        h = Tensor(X)
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            h = ag.linear(h, params[f"w{i}"], params[f"b{i}"])
            if i < n_layers - 1:
                h = ag.relu(h)
        return h

    def _loss(self, z, y):
        if self.task == REGRESSION:
            return ag.mse(z, y)
        if self.task == BINARY:
            return ag.binary_cross_entropy(z, y)
        return ag.cross_entropy(z, y)

    def fit(self, X, y, task: str, n_classes: int = 0) -> "TabMLP":
        self.task = task
        rng = np.random.default_rng(self.seed)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if task == REGRESSION:
            self.y_mean, self.y_std = float(y.mean()), float(y.std()) or 1.0
            y = (y - self.y_mean) / self.y_std
        n = len(X)
        perm = rng.permutation(n)
        n_val = int(round(self.holdout * n)) if n >= 10 else 0
        val, tr = perm[:n_val], perm[n_val:]
        out_dim = 1 if task in (REGRESSION, BINARY) else n_classes
        self.params = self._init(X.shape[1], out_dim, rng)
        opt = AdamW(self.params, {k: 1.0 for k in self.params}, self.weight_decay)
        steps = math.ceil(len(tr) / self.batch_size)
        total = steps * self.epochs
        sched = TrainConfig(peak_lr=self.peak_lr)
        best, best_params, since, step = -math.inf, None, 0, 0
        for _ in range(self.epochs):
            order = tr[rng.permutation(len(tr))]
            for s in range(0, len(order), self.batch_size):
                idx = order[s:s + self.batch_size]
                opt.zero_grad()
                self._loss(self._forward(self.params, X[idx]), y[idx]).backward()
                step += 1
                opt.step(lr_at(step, total, sched))
            check = val if n_val else tr
            score = -float(self._loss(self._forward(self.params, X[check]), y[check]).data)
            if score > best:
                best, since = score, 0
                best_params = {k: p.data.copy() for k, p in self.params.items()}
            else:
                since += 1
                if since >= self.patience:
                    break
        for k, v in best_params.items():
            self.params[k].data = v
        return self

    def predict_raw(self, X) -> np.ndarray:
        z = self._forward(self.params, np.asarray(X, dtype=np.float64)).data
        if self.task == REGRESSION:
            return z[:, 0] * self.y_std + self.y_mean
        if self.task == BINARY:
            p = ag.sigmoid_np(z[:, 0])
            return np.column_stack([1 - p, p])
        return ag.softmax_np(z)
