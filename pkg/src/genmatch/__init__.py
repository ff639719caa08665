"""genmatch: near-optimal generalized full matching for observational studies.

Partitions a sample into matched groups that each contain a configurable
minimum number of units from every treatment condition, with the maximum
within-group distance guaranteed to be within a factor of four of the best
achievable. Includes quality evaluation, an effect estimator for the
treated, an exhaustive-search oracle for tiny problems, greedy baselines,
and a seeded simulation harness.
"""

from .core import (
    Constraints,
    GenmatchError,
    InfeasibleError,
    MatchOptions,
    Sample,
    ValidationError,
    validate_sample,
)
from .digraph import (
    CompatibleDigraph,
    build_compatible_digraph,
    max_arc_weight,
    nn_subgraph,
    write_edge_list,
)
from .estimator import GeneralizedFullMatching
from .evaluate import (
    GroupStats,
    MatchReport,
    att_estimate,
    balance,
    build_report,
    control_weight_sd,
    default_moments,
    group_stats,
    implied_weights,
    objective,
)
from .matcher import (
    Matching,
    SeedSet,
    assign_residual,
    check_admissible,
    find_seeds,
    full_match,
    label_seed_neighborhoods,
    match_details,
)
from .metrics import BoundMetric, Metric, distance, make_metric
from .nnsearch import NnIndex, build_index, knn, knn_batch, knn_excluding
from .oracle import OracleResult, baseline_match, optimal_matching_bruteforce
from .sim import SimConfig, SimReport, generate_sample, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BoundMetric",
    "CompatibleDigraph",
    "Constraints",
    "GeneralizedFullMatching",
    "GenmatchError",
    "GroupStats",
    "InfeasibleError",
    "MatchOptions",
    "MatchReport",
    "Matching",
    "Metric",
    "NnIndex",
    "OracleResult",
    "Sample",
    "SeedSet",
    "SimConfig",
    "SimReport",
    "ValidationError",
    "assign_residual",
    "att_estimate",
    "balance",
    "baseline_match",
    "build_compatible_digraph",
    "build_index",
    "build_report",
    "check_admissible",
    "control_weight_sd",
    "default_moments",
    "distance",
    "find_seeds",
    "full_match",
    "generate_sample",
    "group_stats",
    "implied_weights",
    "knn",
    "knn_batch",
    "knn_excluding",
    "label_seed_neighborhoods",
    "make_metric",
    "match_details",
    "max_arc_weight",
    "nn_subgraph",
    "objective",
    "optimal_matching_bruteforce",
    "run_experiment",
    "validate_sample",
    "write_edge_list",
]
