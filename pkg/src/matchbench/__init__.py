"""Single-index assortative matching: simulation, estimation, benchmarks."""

from .distributions import (
    DistributionModel,
    EmpiricalCDF,
    counterexample_index_cdf,
    empirical_cdf,
    exponential,
    gaussian,
    rademacher,
    sample,
    uniform01,
)
from .errors import (
    ConfigError,
    DegenerateIndexError,
    MatchbenchError,
    NumericalError,
    QuadratureConvergenceError,
    RankRejectionError,
)
from .estimators import (
    EstimatorResult,
    MomentSet,
    cca,
    cca_ratio_scalar_y,
    compute_moments,
    consistency_condition,
    counterexample_population_moments,
    mrs_estimate,
    normalize_weights,
    ols_index,
    population_moments_gaussian,
    spearman_estimate,
    spearman_objective,
    spearman_objective_prob_form,
    spearman_upper_bound,
)
from .market import (
    MarketSpec,
    MatchedSample,
    SurplusShape,
    TransferMap,
    assignment_oracle,
    check_supermodularity,
    counterexample_market,
    gaussian_market,
    simulate_market,
    surplus,
    transfer_map,
)
from .oracle import (
    CounterexampleReport,
    closed_form_counterexample,
    counterexample_expectations,
    matched_outcome,
    monte_carlo_counterexample,
    numeric_counterexample,
    quad_integrate,
)
from .saliency import (
    AffinityDecomposition,
    mutual_indices,
    normalize_attributes,
    rank1_weights,
    svd_decompose,
    verify_surplus_identity,
)

__version__ = "0.1.0"
