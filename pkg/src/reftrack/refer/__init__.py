"""Referring scorer: features, frozen text encoder, KUM model and scoring."""

from .features import FeatureGapError, FeatureStore, read_feature_file, read_features
from .model import (VARIANTS, DegenerateDatasetError, DegenerateInputError, KumConfig, KumParams,
                    PairBatch, focal_loss, forward, kum, kum_baseline, kum_cascade, kum_textfirst,
                    kum_xcorr, logit_head, pair_scores, predict, textual_head, train_refer,
                    visual_feature)
from .scoring import auc, build_pairs, score_table, score_tracklet, window_starts, windows
from .text import TextEncoder, tokenize

__all__ = [
    "VARIANTS", "DegenerateDatasetError", "DegenerateInputError", "FeatureGapError", "FeatureStore",
    "KumConfig", "KumParams", "PairBatch", "TextEncoder", "auc", "build_pairs", "focal_loss",
    "forward", "kum", "kum_baseline", "kum_cascade", "kum_textfirst", "kum_xcorr", "logit_head",
    "pair_scores", "predict", "read_feature_file", "read_features", "score_table",
    "score_tracklet", "textual_head", "tokenize", "train_refer", "visual_feature", "window_starts",
    "windows",
]
