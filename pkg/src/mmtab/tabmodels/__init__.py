"""Tabular model zoo: extremely randomized trees, two GBM presets and an MLP."""
from .kernels import Tree, grow_tree, predict_tree
from .predictor import ERT, GBM_A, GBM_B, TAB_MLP, TABULAR_KINDS, TabularPredictor, fit_ert, fit_gbm, fit_tab_mlp, \
    predict
from .trees import PRESET_A, PRESET_B, ExtraTrees, GBMPreset, GradientBoosting

__all__ = ["Tree", "grow_tree", "predict_tree", "ERT", "GBM_A", "GBM_B", "TAB_MLP", "TABULAR_KINDS",
           "TabularPredictor", "fit_ert", "fit_gbm", "fit_tab_mlp", "predict", "PRESET_A", "PRESET_B",
           "ExtraTrees", "GBMPreset", "GradientBoosting"]
