"""Certified robustness of classifiers against backdoor poisoning attacks.

The package smooths the *training* features with additive noise, which
yields closed-form certificates: whenever the aggregate L2 magnitude of
the patterns an attacker planted in the training set stays below the
certified radius, the smoothed prediction provably cannot have been
flipped by those patterns (label flips are not smoothed and stay outside
the certificate).  Two evaluation paths are provided: an exact dynamic
program for K-nearest-neighbor classifiers and a Monte-Carlo ensemble for
arbitrary base learners.
"""

__version__ = "0.1.0"

from .certify import (
    AttackMagnitude,
    CertifiedPrediction,
    GaussianSmoothing,
    UniformSmoothing,
    certify_attack,
    gaussian_radius,
    gaussian_radius_single_pattern,
    tightness_witness,
    uniform_certified,
)
from .data import Dataset, SplitSpec, load_csv_tabular, load_dataset, load_idx_images, save_dataset
from .attacks import BackdoorSpec, PoisonedDataset, apply_to_test, inject, make_pattern
from .knn import (
    SimilarityModel,
    build_similarity_model,
    bucket_probabilities,
    exact_class_probabilities,
    knn_certify,
    knn_monte_carlo_oracle,
)
from .learners import BaseLearnerSpec, DPConfig
from .metrics import EvaluationRecord, certified_accuracy, certified_rate, prediction_accuracy
from .pipeline import SmoothingConfig, run_pipeline, smoothed_predict, train_ensemble
from .stats import hoeffding_bounds, noncentral_chisq_cdf, std_normal_cdf, std_normal_quantile
