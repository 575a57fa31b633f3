"""Barycentric branching-Brownian particle simulation and verification toolkit."""

from ._backend import available_backends, backend_name
from .core import (
    Configuration,
    InitialCondition,
    Point,
    RngStream,
    RunManifest,
    barycenter,
    brownian_increment,
    extent,
    recenter,
)
from .detcfg import (
    CollapseTrace,
    WeightedConfig,
    branch_update,
    collapse,
    enumerate_compositions,
    neighborhood_stability,
    select_kill,
    unambiguity_margin,
)
from .engine import (
    BranchEvent,
    Trajectory,
    apply_branch,
    kill_index,
    sample_interbranch,
    simulate,
)
from .errors import (
    AmbiguousConfigurationError,
    BbbError,
    CoverageError,
    DomainError,
    ResourceLimitError,
)
from .lineage import (
    BbmNode,
    EventReport,
    LineageRecord,
    detect_A,
    detect_B,
    first_extent_time,
    in_S,
    simulate_bbm_embedded,
)
from .stats import (
    EstimatorReport,
    Histogram,
    donsker_rescale,
    drift_and_isotropy,
    empirical_measure,
    estimate_sigma2,
    fit_tail,
    minorization_check,
    occupation_fraction,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousConfigurationError", "BbbError", "BranchEvent", "BbmNode",
    "CollapseTrace", "Configuration", "CoverageError", "DomainError",
    "EstimatorReport", "EventReport", "Histogram", "InitialCondition",
    "LineageRecord", "Point", "ResourceLimitError", "RngStream", "RunManifest",
    "Trajectory", "WeightedConfig", "apply_branch", "available_backends",
    "backend_name", "barycenter", "branch_update", "brownian_increment",
    "collapse", "detect_A", "detect_B", "donsker_rescale", "drift_and_isotropy",
    "empirical_measure", "enumerate_compositions", "estimate_sigma2", "extent",
    "first_extent_time", "fit_tail", "in_S", "kill_index", "minorization_check",
    "neighborhood_stability", "occupation_fraction", "recenter",
    "sample_interbranch", "select_kill", "simulate", "simulate_bbm_embedded",
    "unambiguity_margin",
]
