"""GP decoder (GP-LVM) training with stochastic active sets.

The package trains Gaussian-process decoders by maximizing a stochastic
active-set estimate of the log-marginal likelihood (or its mean-field ELBO
variant), with amortized or free-form latents, and ships the exhaustive
cross-validation identities that justify the estimate as verification
suites.
"""

from .data import BatchPlan, Dataset, batches, load_csv, load_idx, subset, synth_gp_dataset
from .elbo import VariationalPosterior, elbo_estimate, kl_to_standard_normal, reparam_sample
from .encoder import LatentParamTable, MlpParams, encode, encode_gaussian, init_latent_table, init_mlp
from .errors import (
    BadMagic,
    CapExceeded,
    DimensionMismatch,
    NonFiniteGradient,
    NotPositiveDefinite,
    ParseError,
    ShapeMismatch,
    TruncatedFile,
)
from .estimators import (
    ActiveSplit,
    EstimatorReport,
    conditional_moments,
    cv_identity_check,
    cv_score,
    exact_log_marginal,
    exact_two_term,
    random_split,
    sas_estimate,
    unbiased_marginal_sample,
)
from .kernel import KernelParams, cross_gram, gram, kernel_eval, kernel_grads
from .linalg import CholFactor, cholesky, gaussian_logpdf_zero_mean, robust_cholesky, solve
from .metrics import PredictiveOutput, knn_accuracy, mae, nlpd, rmse
from .optim import ParamSet, adam_step, grad_check
from .train import RunConfig, RunLog, evaluate, run_ablation, train_bayesian_sas, train_sas, verify

__version__ = "0.1.0"

__all__ = [
    "ActiveSplit",
    "BadMagic",
    "BatchPlan",
    "CapExceeded",
    "CholFactor",
    "Dataset",
    "DimensionMismatch",
    "EstimatorReport",
    "KernelParams",
    "LatentParamTable",
    "MlpParams",
    "NonFiniteGradient",
    "NotPositiveDefinite",
    "ParamSet",
    "ParseError",
    "PredictiveOutput",
    "RunConfig",
    "RunLog",
    "ShapeMismatch",
    "TruncatedFile",
    "VariationalPosterior",
    "adam_step",
    "batches",
    "cholesky",
    "conditional_moments",
    "cross_gram",
    "cv_identity_check",
    "cv_score",
    "elbo_estimate",
    "encode",
    "encode_gaussian",
    "evaluate",
    "exact_log_marginal",
    "exact_two_term",
    "gaussian_logpdf_zero_mean",
    "grad_check",
    "gram",
    "init_latent_table",
    "init_mlp",
    "kernel_eval",
    "kernel_grads",
    "kl_to_standard_normal",
    "knn_accuracy",
    "load_csv",
    "load_idx",
    "mae",
    "nlpd",
    "random_split",
    "reparam_sample",
    "rmse",
    "robust_cholesky",
    "run_ablation",
    "sas_estimate",
    "solve",
    "subset",
    "synth_gp_dataset",
    "train_bayesian_sas",
    "train_sas",
    "unbiased_marginal_sample",
    "verify",
]
