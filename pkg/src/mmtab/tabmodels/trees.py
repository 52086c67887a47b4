"""Extremely randomized trees and gradient-boosted trees on encoded matrices.

Both models take ``(X, is_cat)`` from :class:`TabularEncoder` and encoded
labels (class indices or floats).  ``predict_raw`` returns class
probabilities of width ``n_classes`` or a regression vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..frame import BINARY, REGRESSION
from .kernels import EXACT, HIST, RANDOM, Tree, grow_tree, predict_tree


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ExtraTrees:
    """Fully grown trees, K = sqrt(p) candidate features, one random cut each."""

    def __init__(self, n_trees: int = 100, min_leaf: int = 1, max_features: int | None = None, seed: int = 0):
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.seed = seed
        self.trees: list[Tree] = []

    def fit(self, X, is_cat, y, task: str, n_classes: int = 0) -> "ExtraTrees":
        n, p = X.shape
        self.task = task
        if task == REGRESSION:
            G = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        else:
            G = np.eye(n_classes)[np.asarray(y, dtype=np.int64)]
        H = np.ones_like(G)
        self.is_cat = np.asarray(is_cat, dtype=bool)
        n_try = self.max_features or max(1, int(math.sqrt(p)))
        rng = np.random.default_rng(self.seed)
        self.trees = []
        for _ in range(self.n_trees):
            U = rng.random((2 * n + 1, 2 * p))
            self.trees.append(grow_tree(X, self.is_cat, G, H, mode=RANDOM, min_leaf=self.min_leaf, n_try=n_try, U=U))
        return self

    def predict_raw(self, X) -> np.ndarray:
        out = np.zeros((X.shape[0], self.trees[0].value.shape[1]))
        for t in self.trees:
            predict_tree(t, X, self.is_cat, out=out, scale=1.0 / len(self.trees))
        return out[:, 0] if self.task == REGRESSION else out


@dataclass(frozen=True)
class GBMPreset:
    n_trees: int
    max_depth: int
    learning_rate: float
    min_leaf: int
    hist_bins: int = 0          # 0 selects exact splits
    target_stats: bool = False  # encode categoricals by smoothed target means


PRESET_A = GBMPreset(n_trees=100, max_depth=6, learning_rate=0.1, min_leaf=20)
PRESET_B = GBMPreset(n_trees=150, max_depth=4, learning_rate=0.05, min_leaf=10, hist_bins=63, target_stats=True)
PRESETS = {"a": PRESET_A, "b": PRESET_B}

TS_SMOOTHING = 10.0
TS_FOLDS = 5


class GradientBoosting:
    """Newton-step boosting with multi-output trees (one tree per stage).

    Losses: squared error for regression, logistic for binary, softmax for
    multiclass.  Each stage grows a tree on the negative gradient with
    hessian weights; leaf values are the Newton step ``-sum g / (sum h + lam)``.
    """

    def __init__(self, preset: GBMPreset = PRESET_A, seed: int = 0, init: str = "prior"):
        self.preset = preset
        self.seed = seed
        self.init = init
        self.trees: list[Tree] = []
        self.train_loss: list[float] = []

    # -- categorical target statistics
    def _ts_targets(self, y, task, n_classes):
        if task == REGRESSION:
            return np.asarray(y, dtype=np.float64).reshape(-1, 1)
        Y = np.eye(max(n_classes, 2))[np.asarray(y, dtype=np.int64)]
        return Y[:, 1:2] if task == BINARY else Y

    def _ts_fit(self, X, is_cat, y, task, n_classes):
        T = self._ts_targets(y, task, n_classes)
        self.ts_prior = T.mean(axis=0)
        self.ts_tables = {}
        n = X.shape[0]
        folds = np.random.default_rng(self.seed).permutation(n) % TS_FOLDS
        cols = [X[:, ~is_cat]]
        for j in np.flatnonzero(is_cat):
            codes = X[:, j].astype(np.int64)
            size = int(codes.max()) + 1 if n else 1
            self.ts_tables[int(j)] = self._ts_table(codes, T, size)
            enc = np.empty((n, T.shape[1]))
            for f in range(TS_FOLDS):
                hold = folds == f
                table = self._ts_table(codes[~hold], T[~hold], size)
                enc[hold] = table[codes[hold]]
            cols.append(enc)
        return np.concatenate(cols, axis=1)

    def _ts_table(self, codes, T, size):
        sums = np.zeros((size, T.shape[1]))
        np.add.at(sums, codes, T)
        cnt = np.bincount(codes, minlength=size)[:, None]
        return (sums + TS_SMOOTHING * self.ts_prior) / (cnt + TS_SMOOTHING)

    def _ts_apply(self, X, is_cat):
        cols = [X[:, ~is_cat]]
        for j in np.flatnonzero(is_cat):
            table = self.ts_tables[int(j)]
            codes = X[:, j].astype(np.int64)
            enc = np.tile(self.ts_prior, (len(codes), 1))
            known = codes < len(table)
            enc[known] = table[codes[known]]
            cols.append(enc)
        return np.concatenate(cols, axis=1)

    # -- histogram binning
    def _bin_fit(self, X):
        q = np.arange(1, self.preset.hist_bins) / self.preset.hist_bins
        self.edges = [np.unique(np.quantile(X[:, j], q)) if len(X) else np.zeros(0) for j in range(X.shape[1])]

    def _bin_apply(self, X):
        return np.column_stack([np.searchsorted(e, X[:, j], side="left") for j, e in enumerate(self.edges)]
                               ).astype(np.float64) if X.shape[1] else X

    def _design(self, X, is_cat, fit_args=None):
        is_cat = np.asarray(is_cat, dtype=bool)
        if self.preset.target_stats and is_cat.any():
            X = self._ts_fit(X, is_cat, *fit_args) if fit_args else self._ts_apply(X, is_cat)
            is_cat = np.zeros(X.shape[1], dtype=bool)
        if self.preset.hist_bins:
            if is_cat.any():
                raise ValueError("histogram splits need numeric features; enable target_stats")
            if fit_args:
                self._bin_fit(X)
            X = self._bin_apply(X)
        return X, is_cat

    def fit(self, X, is_cat, y, task: str, n_classes: int = 0) -> "GradientBoosting":
        self.task = task
        self.is_cat_in = np.asarray(is_cat, dtype=bool)
        X, self.is_cat = self._design(np.asarray(X, dtype=np.float64), is_cat, (y, task, n_classes))
        n = X.shape[0]
        if task == REGRESSION:
            Y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
            base = Y.mean(axis=0) if self.init == "prior" else np.zeros(1)
            lam = 0.0
        else:
            K = 1 if task == BINARY else n_classes
            Y = np.eye(max(n_classes, 2))[np.asarray(y, dtype=np.int64)]
            Y = Y[:, 1:2] if task == BINARY else Y
            freq = np.clip(Y.mean(axis=0), 1e-6, 1 - 1e-6)
            if self.init != "prior":
                base = np.zeros(K)
            elif task == BINARY:
                base = np.log(freq / (1 - freq))
            else:
                base = np.log(freq)
            lam = 1.0
        self.base = base
        F = np.tile(base, (n, 1))
        mode = HIST if self.preset.hist_bins else EXACT
        self.trees, self.train_loss = [], [self._loss(F, Y)]
        for _ in range(self.preset.n_trees):
            g, h = self._grad(F, Y)
            tree = grow_tree(X, self.is_cat, -g, h, mode=mode, min_leaf=self.preset.min_leaf,
                             max_depth=self.preset.max_depth, lam=lam, min_hess=1e-3 if lam else 0.0,
                             min_gain=1e-12, n_bins=self.preset.hist_bins)
            predict_tree(tree, X, self.is_cat, out=F, scale=self.preset.learning_rate)
            self.trees.append(tree)
            self.train_loss.append(self._loss(F, Y))
        return self

    def _grad(self, F, Y):
        if self.task == REGRESSION:
            return F - Y, np.ones_like(F)
        P = _sigmoid(F) if self.task == BINARY else _softmax(F)
        return P - Y, np.maximum(P * (1 - P), 1e-16)

    def _loss(self, F, Y) -> float:
        if self.task == REGRESSION:
            return float(np.mean((F - Y) ** 2))
        if self.task == BINARY:
            return float(np.mean(np.logaddexp(0.0, F) - Y * F))
        z = F - F.max(axis=1, keepdims=True)
        return float(np.mean(np.log(np.exp(z).sum(axis=1)) - (z * Y).sum(axis=1)))

    def decision_function(self, X) -> np.ndarray:
        X, _ = self._design(np.asarray(X, dtype=np.float64), self.is_cat_in)
        F = np.tile(self.base, (X.shape[0], 1))
        for t in self.trees:
            predict_tree(t, X, self.is_cat, out=F, scale=self.preset.learning_rate)
        return F

    def predict_raw(self, X) -> np.ndarray:
        F = self.decision_function(X)
        if self.task == REGRESSION:
            return F[:, 0]
        if self.task == BINARY:
            p = _sigmoid(F[:, 0])
            return np.column_stack([1 - p, p])
        return _softmax(F)
