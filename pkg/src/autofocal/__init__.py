"""Automated focal losses: progress-adaptive focusing for classification and
probability-based focal regression, with a small numpy trainer to study them."""
from .errors import DomainError, EmptyBatchWarning, TrainingAborted, UsageError
from .focal_core import (CorrectProbability, GammaSchedule, Policy, ProgressTracker, expected_weight_exponent,
                         focal_weight, gamma_info, gamma_quantile, p_correct, update_progress)
from .losses import (ClassificationBatch, LossOutput, RegressionBatch, TaskVariance, alpha_balanced_classification,
                     cross_entropy, focal_classification, focal_regression, multiloss_combine, multiloss_regression,
                     regression_loss, weighted_sum_loss)

__version__ = "0.1.0"
