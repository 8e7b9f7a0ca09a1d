"""Inference for the upper tail of human lifetime distributions.

Parametric hazard families, truncation- and censoring-aware likelihoods,
nonparametric survivor estimates, posterior sampling, Q-Q diagnostics,
and reproducible simulation experiments, with a batch CLI on top.
"""

__version__ = "0.1.0"

from .lexis import (
    CalendarDate,
    FrameError,
    LifetimeRecord,
    SamplingFrame,
    excess_interval,
    idl_observable_set,
    ingest_csv,
    load_frames,
    validate_record,
)
from .models import (
    FAMILIES,
    DomainError,
    ModelSpec,
    ParamError,
    cumulative_hazard,
    density,
    gev_rescale,
    gp_endpoint,
    gp_threshold_rescale,
    hazard,
    log_survivor,
    penultimate_shape,
    quantile,
    sample,
    support,
    survivor,
    validate_params,
)
from .fit import (
    FitError,
    FitResult,
    NumericError,
    ProfileTrace,
    TestResult,
    bootstrap_lrt,
    fit_mle,
    group_comparison,
    loglik,
    lrt_nested,
    nc_fit_and_shape_test,
    profile_endpoint,
    threshold_scan,
    wald_compare_scale,
)
from .nonparam import NPEstimate, kaplan_meier, turnbull_em
from .bayes import (
    HazardBand,
    PosteriorSample,
    PriorSpec,
    RoUError,
    mdi_log_prior,
    posterior_hazard_band,
    posterior_sample,
    rou_sample,
)
from .diagnostics import QQData, qq_bootstrap_band, qq_positions_truncated
from .simlab import (
    CohortSimConfig,
    RateFunction,
    extinct_cohort_experiment,
    simulate_cohorts,
    tabulation_experiment,
    tilted_density,
)

__all__ = [
    "__version__",
    "CalendarDate", "FrameError", "LifetimeRecord", "SamplingFrame",
    "excess_interval", "idl_observable_set", "ingest_csv", "load_frames",
    "validate_record",
    "FAMILIES", "DomainError", "ModelSpec", "ParamError",
    "cumulative_hazard", "density", "gev_rescale", "gp_endpoint",
    "gp_threshold_rescale", "hazard", "log_survivor", "penultimate_shape",
    "quantile", "sample", "support", "survivor", "validate_params",
    "FitError", "FitResult", "NumericError", "ProfileTrace", "TestResult",
    "bootstrap_lrt", "fit_mle", "group_comparison", "loglik", "lrt_nested",
    "nc_fit_and_shape_test", "profile_endpoint", "threshold_scan",
    "wald_compare_scale",
    "NPEstimate", "kaplan_meier", "turnbull_em",
    "HazardBand", "PosteriorSample", "PriorSpec", "RoUError",
    "mdi_log_prior", "posterior_hazard_band", "posterior_sample",
    "rou_sample",
    "QQData", "qq_bootstrap_band", "qq_positions_truncated",
    "CohortSimConfig", "RateFunction", "extinct_cohort_experiment",
    "simulate_cohorts", "tabulation_experiment", "tilted_density",
]
