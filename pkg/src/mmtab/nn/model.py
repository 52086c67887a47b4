"""Text-only and multimodal fusion networks (All-Text, Fuse-Early, Fuse-Late)."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

TEXT_ONLY = "text_only"
ALL_TEXT = "all_text"
FUSE_EARLY = "fuse_early"
FUSE_LATE = "fuse_late"
VARIANTS = (TEXT_ONLY, ALL_TEXT, FUSE_EARLY, FUSE_LATE)

_NEG = -1e9


@dataclass(frozen=True)
class NetConfig:
    variant: str = TEXT_ONLY
    vocab_size: int = 1000
    hidden_size: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_size: int = 256
    max_length: int = 512
    fuse_early_layers: int = 6
    fuse_early_units: int = 64
    fuse_early_heads: int = 4
    fuse_early_ffn: int = 256
    cat_embed_units: int = 32
    cat_bottleneck: int = 64
    late_bottleneck: int = 128
    leaky_slope: float = 0.1
    n_numeric: int = 0
    cat_cardinalities: tuple[int, ...] = ()
    n_text_fields: int = 1
    output_dim: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.hidden_size % self.n_heads:
            raise ValueError("hidden_size must be divisible by n_heads")
        if self.fuse_early_units % self.fuse_early_heads:
            raise ValueError("fuse_early_units must be divisible by fuse_early_heads")
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")

    @property
    def n_categorical(self) -> int:
        return len(self.cat_cardinalities)

    @property
    def embed_width(self) -> int:
        return self.fuse_early_units if self.variant == FUSE_EARLY else self.hidden_size

    @property
    def max_depth(self) -> int:
        """Depth of the token embedding layer (output head is depth 0)."""
        return self.n_layers + 1


@dataclass
class Batch:
    token_ids: np.ndarray      # (B, L) int
    segment_ids: np.ndarray    # (B, L) int
    mask: np.ndarray           # (B, L) bool, True for real tokens
    numeric: np.ndarray        # (B, n_numeric)
    categorical: np.ndarray    # (B, n_categorical) int

    def __len__(self):
        return self.token_ids.shape[0]


def collate(merged: Sequence, numeric=None, categorical=None, max_length: int | None = None) -> Batch:
    """Pad merged inputs to the batch's longest sequence."""
    n = len(merged)
    L = max((len(m) for m in merged), default=1)
    if max_length is not None and L > max_length:
        raise ValueError(f"sequence of length {L} exceeds max_length={max_length}; truncate first")
    L = max(L, 1)
    ids = np.zeros((n, L), dtype=np.int64)
    segs = np.zeros((n, L), dtype=np.int64)
    mask = np.zeros((n, L), dtype=bool)
    for i, m in enumerate(merged):
        k = len(m)
        ids[i, :k] = m.token_ids
        segs[i, :k] = m.segment_ids
        mask[i, :k] = True
    numeric = np.zeros((n, 0)) if numeric is None else np.asarray(numeric, dtype=np.float64).reshape(n, -1)
    categorical = (np.zeros((n, 0), dtype=np.int64) if categorical is None
                   else np.asarray(categorical, dtype=np.int64).reshape(n, -1))
    return Batch(ids, segs, mask, numeric, categorical)


@dataclass
class TrainedNet:
    config: NetConfig
    params: dict[str, Tensor]
    depth: dict[str, int]
    checkpoint_log: list = field(default_factory=list)
    final_params: dict[str, np.ndarray] | None = None

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {v.shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def clone(self) -> "TrainedNet":
        return copy.deepcopy(self)

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())


class _Builder:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.depth: dict[str, int] = {}

    def add(self, name, shape, depth=0, std=None, const=None):
        if const is not None:
            data = np.full(shape, const, dtype=np.float64)
        else:
            if std is None:
                std = 1.0 / np.sqrt(shape[0])
            data = self.rng.normal(0.0, std, size=shape)
        self.params[name] = Tensor(data, requires_grad=True)
        self.depth[name] = depth

    def linear(self, name, n_in, n_out, depth=0, std=None):
        self.add(f"{name}.w", (n_in, n_out), depth, std)
        self.add(f"{name}.b", (n_out,), depth, const=0.0)

    def norm(self, name, n, depth=0):
        self.add(f"{name}.g", (n,), depth, const=1.0)
        self.add(f"{name}.b", (n,), depth, const=0.0)

    def mlp(self, name, n_in, bottleneck, n_out, depth=0):
        self.linear(f"{name}.fc1", n_in, bottleneck, depth)
        self.linear(f"{name}.fc2", bottleneck, n_out, depth)
        self.norm(f"{name}.ln", n_out, depth)

    def encoder(self, name, n_layers, d, ffn, depth_of):
        for i in range(n_layers):
            p, dep = f"{name}.{i}", depth_of(i)
            for proj in ("q", "k", "v", "o"):
                self.linear(f"{p}.attn.{proj}", d, d, dep)
            self.norm(f"{p}.ln1", d, dep)
            self.linear(f"{p}.ffn1", d, ffn, dep)
            self.linear(f"{p}.ffn2", ffn, d, dep)
            self.norm(f"{p}.ln2", d, dep)


def build_net(config: NetConfig, vocab=None, seed: int = 0) -> TrainedNet:
    """Initialize the network for ``config.variant`` deterministically from ``seed``.

    Depth bookkeeping for layer-wise learning-rate decay: the output head and
    all newly attached tabular / fusion parts sit at depth 0; the text
    backbone's top block at depth 1 down to the token embeddings at
    ``config.n_layers + 1``.
    """
    if vocab is not None and len(vocab) != config.vocab_size:
        config = replace(config, vocab_size=len(vocab))
    has_tab = config.n_numeric > 0 or config.n_categorical > 0
    if config.variant in (FUSE_EARLY, FUSE_LATE) and not has_tab:
        raise ValueError(f"{config.variant} needs numeric or categorical columns; use {TEXT_ONLY!r} for text-only data")
    if config.variant in (FUSE_EARLY, FUSE_LATE) and config.n_text_fields < 1:
        raise ValueError(f"{config.variant} needs at least one text field")

    b = _Builder(seed)
    d, L = config.hidden_size, config.n_layers
    emb_depth = L + 1
    b.add("text.tok", (config.vocab_size, d), emb_depth, std=1.0)
    b.add("text.pos", (config.max_length, d), emb_depth, std=0.1)
    b.add("text.seg", (2, d), emb_depth, std=0.1)
    b.norm("text.emb_ln", d, emb_depth)
    b.encoder("text.layer", L, d, config.ffn_size, lambda i: L - i)

    head_in = d
    if config.variant == FUSE_EARLY:
        for j, card in enumerate(config.cat_cardinalities):
            b.add(f"early.cat{j}.emb", (card, config.cat_embed_units), std=1.0)
            b.mlp(f"early.cat{j}", config.cat_embed_units, config.cat_bottleneck, d)
        if config.n_numeric:
            b.mlp("early.num", config.n_numeric, config.late_bottleneck, d)
        u = config.fuse_early_units
        if u != d:
            b.linear("early.proj", d, u)
        b.add("early.type", (3, u), std=0.1)
        b.encoder("early.layer", config.fuse_early_layers, u, config.fuse_early_ffn, lambda i: 0)
        head_in = u
    elif config.variant == FUSE_LATE:
        width = d
        if config.n_categorical:
            for j, card in enumerate(config.cat_cardinalities):
                b.add(f"late.cat{j}.emb", (card, config.cat_embed_units), std=1.0)
                b.mlp(f"late.cat{j}", config.cat_embed_units, config.cat_bottleneck, d)
            b.mlp("late.cat", config.n_categorical * d, config.late_bottleneck, d)
            width += d
        if config.n_numeric:
            b.mlp("late.num", config.n_numeric, config.late_bottleneck, d)
            width += d
        head_in = width
    b.linear("head.fc1", head_in, d)
    b.linear("head.fc2", d, config.output_dim)
    return TrainedNet(config, b.params, b.depth)


# -- forward ---------------------------------------------------------------

def _lin(P, name, x):
    return ag.linear(x, P[f"{name}.w"], P[f"{name}.b"])


def _ln(P, name, x):
    return ag.layer_norm(x, P[f"{name}.g"], P[f"{name}.b"])


def _mlp(P, name, x, slope):
    h = ag.leaky_relu(_lin(P, f"{name}.fc1", x), slope)
    return _ln(P, f"{name}.ln", _lin(P, f"{name}.fc2", h))


def _encoder_layer(P, name, x, mask_add, n_heads):
    B, T, d = x.shape
    dh = d // n_heads

    def heads(t):
        return ag.transpose(ag.reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    q = heads(_lin(P, f"{name}.attn.q", x))
    k = heads(_lin(P, f"{name}.attn.k", x))
    v = heads(_lin(P, f"{name}.attn.v", x))
    ctx = ag.attention(q, k, v, mask_add)
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    x = _ln(P, f"{name}.ln1", ag.add(x, _lin(P, f"{name}.attn.o", ctx)))
    h = _lin(P, f"{name}.ffn2", ag.gelu(_lin(P, f"{name}.ffn1", x)))
    return _ln(P, f"{name}.ln2", ag.add(x, h))


def _mask_add(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, _NEG)[:, None, None, :]


def _text_tokens(net: TrainedNet, batch: Batch) -> Tensor:
    cfg, P = net.config, net.params
    T = batch.token_ids.shape[1]
    if T > cfg.max_length:
        raise ValueError(f"sequence length {T} exceeds max_length={cfg.max_length}")
    x = ag.add(ag.add(ag.embedding(P["text.tok"], batch.token_ids), ag.index(P["text.pos"], slice(0, T))),
               ag.embedding(P["text.seg"], batch.segment_ids))
    x = _ln(P, "text.emb_ln", x)
    m = _mask_add(batch.mask)
    for i in range(cfg.n_layers):
        x = _encoder_layer(P, f"text.layer.{i}", x, m, cfg.n_heads)
    return x


def _cat_tokens(P, prefix, batch, cfg):
    toks = []
    for j in range(cfg.n_categorical):
        e = ag.embedding(P[f"{prefix}.cat{j}.emb"], batch.categorical[:, j])
        toks.append(_mlp(P, f"{prefix}.cat{j}", e, cfg.leaky_slope))
    return toks


def _pooled(net: TrainedNet, batch: Batch) -> tuple[Tensor, Tensor]:
    """(representation fed to the head, text embedding)."""
    cfg, P = net.config, net.params
    _check_batch(cfg, batch)
    tokens = _text_tokens(net, batch)
    cls = ag.index(tokens, (slice(None), 0, slice(None)))
    if cfg.variant in (TEXT_ONLY, ALL_TEXT):
        return cls, cls
    if cfg.variant == FUSE_LATE:
        parts = [cls]
        if cfg.n_categorical:
            cats = _cat_tokens(P, "late", batch, cfg)
            parts.append(_mlp(P, "late.cat", ag.concat(cats, axis=-1), cfg.leaky_slope))
        if cfg.n_numeric:
            parts.append(_mlp(P, "late.num", ag.Tensor(batch.numeric), cfg.leaky_slope))
        return ag.concat(parts, axis=-1), cls
    # fuse_early
    B, T, d = tokens.shape
    seq = [tokens]
    types = [np.zeros(T, dtype=np.int64)]
    for t in _cat_tokens(P, "early", batch, cfg):
        seq.append(ag.reshape(t, (B, 1, d)))
        types.append(np.ones(1, dtype=np.int64))
    if cfg.n_numeric:
        seq.append(ag.reshape(_mlp(P, "early.num", ag.Tensor(batch.numeric), cfg.leaky_slope), (B, 1, d)))
        types.append(np.full(1, 2, dtype=np.int64))
    x = ag.concat(seq, axis=1)
    if cfg.fuse_early_units != d:
        x = _lin(P, "early.proj", x)
    x = ag.add(x, ag.embedding(P["early.type"], np.concatenate(types)))
    n_tab = x.shape[1] - T
    mask = np.concatenate([batch.mask, np.ones((B, n_tab), dtype=bool)], axis=1)
    m = _mask_add(mask)
    for i in range(cfg.fuse_early_layers):
        x = _encoder_layer(P, f"early.layer.{i}", x, m, cfg.fuse_early_heads)
    cls = ag.index(x, (slice(None), 0, slice(None)))
    return cls, cls


def _check_batch(cfg: NetConfig, batch: Batch):
    if cfg.variant in (FUSE_EARLY, FUSE_LATE):
        if batch.numeric.shape[1] != cfg.n_numeric or batch.categorical.shape[1] != cfg.n_categorical:
            raise ValueError(f"batch has {batch.numeric.shape[1]} numeric / {batch.categorical.shape[1]} categorical "
                             f"columns, network expects {cfg.n_numeric} / {cfg.n_categorical}")


def logits(net: TrainedNet, batch: Batch) -> Tensor:
    """Raw head output, shape (B, output_dim)."""
    pooled, _ = _pooled(net, batch)
    P = net.params
    h = ag.leaky_relu(_lin(P, "head.fc1", pooled), net.config.leaky_slope)
    return _lin(P, "head.fc2", h)


def link(raw: np.ndarray, task: str) -> np.ndarray:
    """Map raw outputs to a prediction matrix for ``task``."""
    if task == "regression":
        return raw.reshape(-1)
    if task == "binary":
        p = ag.sigmoid_np(raw.reshape(-1))
        return np.column_stack([1.0 - p, p])
    return ag.softmax_np(raw)


def forward(net: TrainedNet, batch: Batch, task: str) -> np.ndarray:
    """Predictions: (B,) for regression, (B, n_classes) probabilities otherwise."""
    return link(logits(net, batch).data, task)


def embed(net: TrainedNet, batch: Batch) -> np.ndarray:
    """Top-layer CLS vector; for Fuse-Late only its text-branch part."""
    _, text_vec = _pooled(net, batch)
    return text_vec.data.copy()
