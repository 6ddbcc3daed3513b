"""Learning finite location-scale mixtures by minimum Wasserstein distance
and by penalized maximum likelihood."""

__version__ = "0.1.0"

from .distributions import (  # noqa: E402
    FAMILIES,
    GUMBEL,
    LOGISTIC,
    NORMAL,
    DomainError,
    Family,
    MixingDistribution,
    MixtureError,
    SortedSample,
    UnsupportedMixtureError,
    get_family,
    log_likelihood,
    map_classify,
    mixture_cdf,
    mixture_pdf,
    mixture_quantile,
    sample,
)
from .metrics import ari, l2_mixture_distance, overlap_report, pairwise_overlap, solve_b_for_overlap  # noqa: E402
from .mwde import FitReport, MwdeConfig, fit_homogeneous_mwde, fit_mwde, gradient_w2, objective_w2  # noqa: E402
from .pmle import PenaltyConfig, PmleConfig, em_step, fit_pmle, penalized_loglik  # noqa: E402

__all__ = [
    "FAMILIES", "NORMAL", "LOGISTIC", "GUMBEL", "Family", "get_family",
    "MixingDistribution", "SortedSample", "MixtureError", "DomainError", "UnsupportedMixtureError",
    "mixture_pdf", "mixture_cdf", "mixture_quantile", "sample", "map_classify", "log_likelihood",
    "objective_w2", "gradient_w2", "fit_mwde", "fit_homogeneous_mwde", "MwdeConfig", "FitReport",
    "PenaltyConfig", "PmleConfig", "penalized_loglik", "em_step", "fit_pmle",
    "l2_mixture_distance", "ari", "pairwise_overlap", "overlap_report", "solve_b_for_overlap",
]
