"""Statistical laboratory: mixture regression sampling, least-squares fitting
of the mixing measure, Voronoi losses, and convergence-rate experiments."""

from .fitting import (
    FitResult,
    OptimizerConfig,
    duplicate_atom,
    fit_least_squares,
    perturbed_measure,
    random_measure,
)
from .kernels import backend_name
from .model import (
    MixingMeasure,
    PretrainedExpertSpec,
    RegressionConfig,
    eval_regression_batch,
    eval_true_regression,
    make_ground_truth,
    make_pretrained_spec,
    pretrained_expert_values,
    pretrained_scores,
    sample_dataset,
)
from .rates import (
    DEFAULT_N_GRID,
    RateExperimentConfig,
    RateResult,
    fit_loglog_slope,
    run_rate_experiment,
)
from .voronoi import (
    VoronoiAssignment,
    voronoi_assign,
    voronoi_loss_d1,
    voronoi_loss_d2,
)

__all__ = [
    "FitResult",
    "OptimizerConfig",
    "duplicate_atom",
    "fit_least_squares",
    "perturbed_measure",
    "random_measure",
    "backend_name",
    "MixingMeasure",
    "PretrainedExpertSpec",
    "RegressionConfig",
    "eval_regression_batch",
    "eval_true_regression",
    "make_ground_truth",
    "make_pretrained_spec",
    "pretrained_expert_values",
    "pretrained_scores",
    "sample_dataset",
    "DEFAULT_N_GRID",
    "RateExperimentConfig",
    "RateResult",
    "fit_loglog_slope",
    "run_rate_experiment",
    "VoronoiAssignment",
    "voronoi_assign",
    "voronoi_loss_d1",
    "voronoi_loss_d2",
]
