"""eqcon: distributions under hard linear equality constraints.

Condition Gaussian and exactly-k (Poisson) laws on linear equality
constraints, sample exactly from the constrained laws, evaluate closed-form
expected L1/L2 losses and their analytic gradients, benchmark a family of
gradient estimators against the analytic ground truth, and train a small
constrained regressor end to end.
"""
from . import errors
from .bench import BenchConfig, EstimatorReport, Family, cosine_distance, run_bench
from .constraints import (
    DEFAULT_TOL,
    ConstraintSystem,
    constraint_from_json,
    is_satisfied,
    new_constraint,
    residual,
)
from .discrete import (
    ExactlyK,
    constrained_pmf,
    exactly_k,
    marginal_expectation,
    marginal_pmf,
)
from .discrete import sample as sample_exactly_k
from .estimators import (
    EstimatorKind,
    GradEstimate,
    estimate_grad,
    poisson_estimate_grad,
    project_l1,
    project_l2,
)
from .gaussian import ConditionedGaussian, GaussianParams, condition, marginal_pdf
from .gaussian import sample as sample_gaussian
from .gaussian import unconstrained_pdf
from .losses import (
    LossKind,
    expected_loss_gaussian,
    expected_loss_poisson,
    grad_expected_loss_gaussian,
    grad_expected_loss_poisson,
    mc_expected_loss,
)
from .train import (
    CstrTask,
    EncoderSpec,
    TrainConfig,
    TrainMethod,
    TrainReport,
    finite_diff_check,
    make_cstr_task,
    train_model,
)
from .verify import run_verify

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "ConditionedGaussian",
    "ConstraintSystem",
    "CstrTask",
    "DEFAULT_TOL",
    "EncoderSpec",
    "EstimatorKind",
    "EstimatorReport",
    "ExactlyK",
    "Family",
    "GaussianParams",
    "GradEstimate",
    "LossKind",
    "TrainConfig",
    "TrainMethod",
    "TrainReport",
    "condition",
    "constrained_pmf",
    "constraint_from_json",
    "cosine_distance",
    "errors",
    "estimate_grad",
    "exactly_k",
    "expected_loss_gaussian",
    "expected_loss_poisson",
    "finite_diff_check",
    "grad_expected_loss_gaussian",
    "grad_expected_loss_poisson",
    "is_satisfied",
    "make_cstr_task",
    "marginal_expectation",
    "marginal_pdf",
    "marginal_pmf",
    "mc_expected_loss",
    "new_constraint",
    "poisson_estimate_grad",
    "project_l1",
    "project_l2",
    "residual",
    "run_bench",
    "run_verify",
    "sample_exactly_k",
    "sample_gaussian",
    "train_model",
    "unconstrained_pdf",
]
