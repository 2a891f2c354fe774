"""Kurtosis-guided denoising score matching for tabular anomaly detection."""

from .errors import (DegenerateFeatureError, DomainError, InvalidInputError, KDSMError,
                     NumericError, StateError)
from .marginal_stats import FeatureStats, compute_feature_stats, feature_stats, rearranged_kurtosis
from .metrics import EvalReport, LabeledDataset, auc_pr, auc_roc, evaluate, f1_top_k
from .noise_scale import NoisePlan, make_noise_plan
from .training import TrainConfig, TrainedModel, anomaly_score, fit, fit_dsm, fit_kdsm_ema

__version__ = "0.1.0"
