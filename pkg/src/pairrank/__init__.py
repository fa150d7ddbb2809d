"""Rating and ranking from paired comparisons.

Fits Bradley-Terry models by maximum likelihood, traces fused-penalty paths
that group statistically indistinguishable players, estimates the latent
ability distribution nonparametrically, and turns the result into posterior
ranking rules.  A simulation laboratory compares the estimators under
controlled designs, and a CLI wires everything to files.
"""

from .btmle import (
    BradleyTerry,
    FitResult,
    SolverOptions,
    fit_mle,
    log_likelihood,
    pairwise_covariance,
    win_probability,
)
from .comparisons import (
    CitationMatrix,
    ComparisonDataset,
    MatchRecord,
    aggregate,
    connected_components,
    dataset_from_match_csv,
    from_citation_matrix,
    read_citation_csv,
    read_match_csv,
    win_totals,
)
from .exceptions import (
    ConvergenceError,
    DisconnectedGraphError,
    DivergenceError,
    PairRankError,
)
from .fusedlasso import (
    GroupedBradleyTerry,
    LassoOptions,
    LassoPath,
    LassoSolution,
    bic,
    default_lambda_grid,
    extract_groups,
    fit_penalized,
    penalty,
    select_lambda,
    solve_path,
    subgradient_certificate,
)
from .npmle import (
    GaussianObservations,
    GridSpec,
    KieferWolfowitz,
    MixingDistribution,
    PosteriorSummary,
    fit_npmle,
    marginal_density,
    mixture_loglik,
    observations_from_fit,
    posterior_mean,
    posterior_mean_ranks,
    posterior_summary,
    rank_probabilities,
    silverman_bandwidth,
    smoothed_posterior_mean,
)
from .scores import (
    METHODS,
    RankingTable,
    borda,
    kendall_tau,
    ranks_from_scores,
    weighted_borda,
)
from .simlab import (
    AbilityLaw,
    MatchingDesign,
    SimConfig,
    SimResult,
    compute_method_scores,
    draw_abilities,
    draw_matches,
    run_cell,
    run_grid,
)

__version__ = "0.1.0"

__all__ = [
    "AbilityLaw",
    "BradleyTerry",
    "CitationMatrix",
    "ComparisonDataset",
    "ConvergenceError",
    "DisconnectedGraphError",
    "DivergenceError",
    "FitResult",
    "GaussianObservations",
    "GridSpec",
    "GroupedBradleyTerry",
    "KieferWolfowitz",
    "LassoOptions",
    "LassoPath",
    "LassoSolution",
    "MatchRecord",
    "MatchingDesign",
    "METHODS",
    "MixingDistribution",
    "PairRankError",
    "PosteriorSummary",
    "RankingTable",
    "SimConfig",
    "SimResult",
    "SolverOptions",
    "aggregate",
    "bic",
    "borda",
    "compute_method_scores",
    "connected_components",
    "dataset_from_match_csv",
    "default_lambda_grid",
    "draw_abilities",
    "draw_matches",
    "extract_groups",
    "fit_mle",
    "fit_npmle",
    "fit_penalized",
    "from_citation_matrix",
    "kendall_tau",
    "log_likelihood",
    "marginal_density",
    "mixture_loglik",
    "observations_from_fit",
    "pairwise_covariance",
    "penalty",
    "posterior_mean",
    "posterior_mean_ranks",
    "posterior_summary",
    "rank_probabilities",
    "ranks_from_scores",
    "read_citation_csv",
    "read_match_csv",
    "run_cell",
    "run_grid",
    "select_lambda",
    "silverman_bandwidth",
    "smoothed_posterior_mean",
    "solve_path",
    "subgradient_certificate",
    "weighted_borda",
    "win_probability",
    "win_totals",
]
