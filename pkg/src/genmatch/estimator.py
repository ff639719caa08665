"""Scikit-learn style front end for the matching algorithm.

``GeneralizedFullMatching`` behaves like a transductive clusterer (compare
DBSCAN or agglomerative clustering): ``fit(X, w)`` partitions the fitted
units and leaves the group assignment in ``labels_``. Parameters follow the
get_params/set_params protocol, so the estimator clones and composes with
the usual scikit-learn tooling.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .core import Constraints, MatchOptions, ValidationError, validate_sample
from .digraph import max_arc_weight
from .matcher import match_details
from .metrics import make_metric


class GeneralizedFullMatching(BaseEstimator):
    """Partition units into matched groups satisfying size constraints.

    Parameters:
        constraints: tuple ``(c_1, ..., c_k, t)``: at least c_j units of
            condition j and t units in total per group.
        metric: "euclidean", "mahalanobis", "scalar", or a Metric instance.
        scaling: positive-definite scaling matrix for mahalanobis; estimated
            from the sample covariance when omitted.
        refined_seeds: pick seeds fewest-conflicts-first.
        global_step5: assign leftover units to the globally nearest labeled
            unit.
        caliper: maximum arc length when building the digraph; units whose
            required arcs cannot fit are dropped.
        assign_caliper: maximum distance for global leftover assignment.
        focus: unit indices guaranteed assignment, or "treated" for the
            first condition; None matches everyone.
        workers: thread count for neighbor queries (-1 = all cores).

    Attributes (after fit):
        labels_: (n,) group id per unit, -1 when unassigned.
        matching_: the underlying :class:`genmatch.matcher.Matching`.
        sample_: the validated sample.
        seeds_: units anchoring each group, in group-id order.
        max_arc_weight_: largest digraph arc; 4x this bounds the maximum
            within-group distance.
    """

    def __init__(
        self,
        constraints=(1, 1, 2),
        metric="euclidean",
        scaling=None,
        refined_seeds: bool = False,
        global_step5: bool = False,
        caliper: Optional[float] = None,
        assign_caliper: Optional[float] = None,
        focus=None,
        workers: int = -1,
    ):
        self.constraints = constraints
        self.metric = metric
        self.scaling = scaling
        self.refined_seeds = refined_seeds
        self.global_step5 = global_step5
        self.caliper = caliper
        self.assign_caliper = assign_caliper
        self.focus = focus
        self.workers = workers

    def fit(self, X, w):
        """Match the units with covariates ``X`` and condition labels ``w``."""
        sample = validate_sample(X, w)
        constraints = Constraints.from_tuple(self.constraints)
        if constraints.k != sample.k:
            raise ValidationError(
                f"constraints describe {constraints.k} conditions, data has {sample.k}"
            )
        focus = self.focus
        if isinstance(focus, str):
            if focus != "treated":
                raise ValidationError(f"unknown focus {focus!r}; expected 'treated' or indices")
            focus = sample.treatment_sets[0]
        options = MatchOptions(
            refined_seeds=self.refined_seeds,
            global_step5=self.global_step5,
            caliper_gc=self.caliper,
            caliper_step5=self.assign_caliper,
            focus_set=focus,
        )
        metric = make_metric(self.metric, scaling=self.scaling)
        matching, digraph, seeds = match_details(
            sample, metric, constraints, options, workers=self.workers
        )
        self.sample_ = sample
        self.matching_ = matching
        self.labels_ = matching.labels
        self.seeds_ = seeds.seeds
        self.n_groups_ = matching.n_groups
        self.max_arc_weight_ = (
            max_arc_weight(digraph) if digraph.feasible.any() else np.nan
        )
        return self

    def fit_predict(self, X, w):
        """Fit and return the per-unit group labels."""
        return self.fit(X, w).labels_
