from .binning import MISSING_BIN, apply_bins, bin_features, compute_bin_edges
from .boosting import (
    BoostedEnsemble,
    GbdtConfig,
    class_prior_scores,
    dumps,
    feature_importance,
    load_model,
    loads,
    log_loss,
    model_digest,
    predict_label,
    predict_logits,
    predict_proba,
    save_model,
    softmax,
    softmax_gradients,
    train,
)
from .tree import DecisionTree, grow_tree

__all__ = [
    "MISSING_BIN",
    "BoostedEnsemble",
    "DecisionTree",
    "GbdtConfig",
    "apply_bins",
    "bin_features",
    "class_prior_scores",
    "compute_bin_edges",
    "dumps",
    "feature_importance",
    "grow_tree",
    "load_model",
    "loads",
    "log_loss",
    "model_digest",
    "predict_label",
    "predict_logits",
    "predict_proba",
    "save_model",
    "softmax",
    "softmax_gradients",
    "train",
]
