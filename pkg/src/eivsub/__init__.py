"""Corrected-likelihood subsampling for linear models with noisy covariates."""

from .core import (
    CoefficientEstimate,
    Dataset,
    ErrorCovariance,
    ReplicatedDataset,
    corrected_gradient,
    corrected_loss,
    estimate_sigma_uu,
    full_asymptotic_covariance,
    full_corrected_estimate,
    ols,
    replicate_averaged_estimate,
)
from .errors import (
    ConfigError,
    DegeneratePlanError,
    EIVError,
    NumericalError,
    PilotFailureError,
    SingularSystemError,
    VarianceUnavailableError,
)
from .ingest import ColumnSpec, inject_error, load_csv
from .perturbation import ClepsResult, PerturbationWeights, cleps_estimate, generate_weights, perturbed_estimate
from .sampling import (
    SamplingPlan,
    iboss_select,
    leverage_probs,
    optimal_probs_mv,
    optimal_probs_mvc,
    uncorrected_variant,
    uniform_probs,
)
from .simgen import GeneratedData, SimScenario, example1_scenario, generate
from .subsample import (
    TwoStepResult,
    WeightedSubsample,
    draw_with_replacement,
    plugin_covariance,
    two_step_estimate,
    weighted_corrected_estimate,
)

__version__ = "0.1.0"
