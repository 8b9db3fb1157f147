"""weldsight: weld-seam inspection with activation-map reliability scoring.

A small reverse-mode autodiff engine drives two CNN feature extractor
families; gradient-weighted class activation maps are reduced to a red
color ratio, and (score_1, score_2, rcr) feeds four decision-stage
classifiers that are benchmarked against the plain argmax decision.
"""

__version__ = "0.1.0"

from .autodiff import ComputationGraph, Tensor, finite_diff_grad
from .classifiers import (BoostConfig, FeatureVector, KernelSpec, classify,
                          kernel_eval, train_gbt, train_svm, train_tree)
from .dataset import DatasetConfig, WeldImage, augment, generate, split
from .gradcam import ClassActivationMap, Heatmap, compute_cam, normalize_upsample
from .heatmap_analysis import (ColorAnchorSet, HeatmapStats, RgbHeatmap,
                               cluster_colors, colorize, red_color_ratio)
from .models import (FeatureExtractor, ModelSpec, ScorePair, TrainConfig,
                     build_model, freeze, load_frozen, predict_scores, train)
from .optim import ExponentialDecay, OptimizerConfig, optimizer_step
from .pipeline import (AccuracyReport, DecisionRecord, decide_new, decide_old,
                       extract_features, run_experiment)
