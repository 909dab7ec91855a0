"""Variational (diagonal-Gaussian) classifiers with selective prediction and calibration metrics."""

from .inference import PredictiveSummary, predict_mc_dropout, predict_mean, predict_sampled, summarize
from .metrics import (
    EvalRecord,
    MetricsConfig,
    RiskCoverageCurve,
    auc_risk_coverage,
    best_phi_threshold,
    build_curve,
    cov_low_risk,
    coverage_at_risk,
    coverage_by_category,
    ece,
    effective_reliability,
    evaluate,
    threshold_generalization,
)
from .mixture import MixtureSpec, alpha_sweep, mix_records
from .model import ClassifierSpec, Dataset, Sample, TaskSpec, forward, gen_synthetic_task, loss_and_grad, soft_accuracy
from .posterior import IvonHyper, OptimizerState, Posterior, elbo_estimate, init_posterior, ivon_step, sample_weights
from .selection import Selector, g_maxprob, g_mean, g_mean_minus_std, g_projection, project_confidence, selective_predict

__version__ = "0.1.0"
