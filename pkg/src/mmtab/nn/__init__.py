"""Autodiff core, fusion network architectures and their training loop."""
from .model import ALL_TEXT, FUSE_EARLY, FUSE_LATE, TEXT_ONLY, VARIANTS, Batch, NetConfig, TrainedNet, build_net, \
    collate, embed, forward
from .pipeline import FusionModel, NetSpec
from .train import TrainConfig, layer_multiplier, lr_at, train

__all__ = ["ALL_TEXT", "FUSE_EARLY", "FUSE_LATE", "TEXT_ONLY", "VARIANTS", "Batch", "NetConfig", "TrainedNet",
           "build_net", "collate", "embed", "forward", "FusionModel", "NetSpec", "TrainConfig", "layer_multiplier",
           "lr_at", "train"]
