"""Reward-learning for policy-gradient training of probabilistic regressors.

Trains Gaussian and categorical models either by maximum likelihood or by an
entropy-regularized policy gradient whose Mahalanobis reward is chosen in closed
form, by a covariance heuristic, or by implicit bilevel optimization.
"""

from .bilevel import BilevelConfig, BilevelTrace, cg_solve, heuristic_reward, hypergradient, solve_bilevel
from .closed_form import inner_solution, isotropic_reward, optimal_reward, verify_family
from .data import CsvSchema, Dataset, generate_classification, generate_regression, generate_synthetic, load_csv
from .errors import (
    BreakdownNonFinite,
    ConfigError,
    DataError,
    DimensionMismatch,
    NllpoError,
    NonFiniteLoss,
    NotPositiveDefinite,
    StationarityViolated,
)
from .harness import MetricsRecord, RunConfig, evaluate_classifier, evaluate_moments, landscape_sweep, train
from .linalg import SpdMatrix, cholesky
from .models import CategoricalPolicy, GaussianPolicy, LinearGaussianTruth
from .objectives import PgConfig, RewardParams, nll_loss, pg_loss_categorical, pg_loss_gaussian

__version__ = "0.1.0"
