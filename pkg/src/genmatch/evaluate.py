"""Match quality measures: distance aggregates, implied weights, covariate
balance, group structure, and the treated-units average effect estimator.

For two-condition samples, condition 1 is treated and condition 2 is
control. Aggregates follow the conventions documented on each function;
pairs are unordered and counted once, and standard deviations use the
population (divide-by-N) convention.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Sample, ValidationError
from .matcher import Matching
from .metrics import Metric

OBJECTIVES = ("lmax", "lmax_tc", "lmean", "lmean_tc", "lsum_tc")


def _require_two_conditions(sample: Sample, what: str) -> None:
    if sample.k != 2:
        raise ValidationError(
            f"{what} is defined for treated/control samples (k=2), sample has k={sample.k}"
        )


def _group_pair_distances(bound, members: np.ndarray):
    """Unordered within-group pair distances and a same/different-condition
    mask, counted once per pair."""
    D = bound.cross_distances(members, members)
    iu, ju = np.triu_indices(members.size, k=1)
    return D[iu, ju], iu, ju


def objective(matching: Matching, sample: Sample, metric: Metric, which: str) -> float:
    """One of the five within-group distance aggregates.

    - ``lmax``: maximum distance over all within-group pairs.
    - ``lmax_tc``: maximum over pairs with different conditions.
    - ``lmean``: sum over groups of the group's treated share of the sample
      times its mean pair distance.
    - ``lmean_tc``: as lmean but averaging only cross-condition pairs.
    - ``lsum_tc``: total cross-condition pair distance.

    The ``_tc`` variants require k=2. Groups without a cross-condition pair
    are skipped by ``lmax_tc``, contribute zero to ``lmean_tc`` when they
    hold no treated units, and are an error for ``lmean_tc`` otherwise.
    Single-unit groups contribute zero to the mean objectives.
    """
    if which not in OBJECTIVES:
        raise ValidationError(f"unknown objective {which!r}; expected one of {OBJECTIVES}")
    if matching.n_groups == 0:
        raise ValidationError("matching has no groups")
    if which.endswith("_tc"):
        _require_two_conditions(sample, which)
    bound = metric.bind(sample)
    w = sample.treatment
    n_treated = len(sample.treatment_sets[0])
    if which.startswith("lmean") and n_treated == 0:
        raise ValidationError(f"{which} is undefined: sample has no condition-1 units")

    best = 0.0
    total = 0.0
    seen_cross = False
    for gid, members in enumerate(matching.groups):
        d, iu, ju = _group_pair_distances(bound, members)
        if which == "lmax":
            if d.size:
                best = max(best, float(d.max()))
            continue
        share = float((w[members] == 1).sum()) / n_treated
        if which == "lmean":
            if d.size and share > 0.0:
                total += share * float(d.mean())
            continue
        cross = w[members][iu] != w[members][ju]
        dc = d[cross]
        if which == "lmax_tc":
            if dc.size:
                seen_cross = True
                best = max(best, float(dc.max()))
        elif which == "lsum_tc":
            total += float(dc.sum())
        else:  # lmean_tc
            if share == 0.0:
                continue
            if dc.size == 0:
                raise ValidationError(
                    f"group {gid} has treated units but no treated-control pair"
                )
            total += share * float(dc.mean())
    if which == "lmax":
        return best
    if which == "lmax_tc":
        if not seen_cross:
            raise ValidationError("matching has no treated-control pairs")
        return best
    return total


def implied_weights(matching: Matching, sample: Sample) -> np.ndarray:
    """Per-unit estimator weights the matching implies, targeting the
    average effect on the treated.

    Assigned treated units weigh 1 / (number of treated in the sample); a
    control in group m weighs (treated in m) / (total treated * controls
    in m). Unassigned units weigh zero.
    """
    _require_two_conditions(sample, "implied_weights")
    w = sample.treatment
    n_treated = len(sample.treatment_sets[0])
    if n_treated == 0:
        raise ValidationError("sample has no treated units")
    weights = np.zeros(sample.n, dtype=np.float64)
    for gid, members in enumerate(matching.groups):
        treated = members[w[members] == 1]
        controls = members[w[members] == 2]
        if controls.size == 0:
            raise ValidationError(f"group {gid} has no control units")
        weights[treated] = 1.0 / n_treated
        weights[controls] = treated.size / (n_treated * controls.size)
    return weights


def att_estimate(matching: Matching, sample: Sample, outcomes) -> float:
    """Treated-weighted average of within-group mean outcome differences."""
    _require_two_conditions(sample, "att_estimate")
    y = np.asarray(outcomes, dtype=np.float64)
    if y.shape != (sample.n,):
        raise ValidationError(f"outcomes must have shape ({sample.n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("outcomes contain non-finite values")
    w = sample.treatment
    n_treated = len(sample.treatment_sets[0])
    total = 0.0
    for gid, members in enumerate(matching.groups):
        treated = members[w[members] == 1]
        controls = members[w[members] == 2]
        if treated.size == 0 or controls.size == 0:
            raise ValidationError(f"group {gid} lacks a treatment condition")
        total += (treated.size / n_treated) * (
            float(y[treated].mean()) - float(y[controls].mean())
        )
    return total


@dataclass(frozen=True)
class GroupStats:
    mean_size: float
    size_sd: float
    pct_dropped: float


def group_stats(matching: Matching, sample: Sample) -> GroupStats:
    """Average group size, its population standard deviation, and the
    percentage of units left unassigned."""
    pct = 100.0 * matching.unassigned.size / sample.n
    if matching.n_groups == 0:
        return GroupStats(mean_size=math.nan, size_sd=math.nan, pct_dropped=pct)
    sizes = np.array([g.size for g in matching.groups], dtype=np.float64)
    return GroupStats(
        mean_size=float(sizes.mean()),
        size_sd=float(sizes.std(ddof=0)),
        pct_dropped=pct,
    )


def control_weight_sd(matching: Matching, sample: Sample) -> float:
    """Population sd of control-unit implied weights, scaled by n so the
    weights are relative to a uniform 1/n weighting."""
    weights = implied_weights(matching, sample) * sample.n
    controls = sample.treatment_sets[1]
    return float(weights[controls].std(ddof=0))


def default_moments(d: int) -> list:
    """First and second covariate moments: coordinates, squares, then cross
    products."""
    moments = [tuple(int(i == a) for i in range(d)) for a in range(d)]
    moments += [tuple(2 * int(i == a) for i in range(d)) for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            moments.append(tuple(int(i == a) + int(i == b) for i in range(d)))
    return moments


def moment_name(exponents) -> str:
    parts = []
    for i, e in enumerate(exponents):
        if e == 1:
            parts.append(f"x{i + 1}")
        elif e > 1:
            parts.append(f"x{i + 1}^{e}")
    return "*".join(parts) if parts else "1"


def balance(
    matching: Optional[Matching],
    sample: Sample,
    moments=None,
) -> dict:
    """Absolute weighted mean differences between the adjusted conditions.

    Each moment is a tuple of per-coordinate exponents. Weighting matches
    the effect estimator (implied weights); pass ``matching=None`` for the
    unadjusted contrast with uniform within-condition weights.
    """
    _require_two_conditions(sample, "balance")
    if moments is None:
        moments = default_moments(sample.d)
    treated = sample.treatment_sets[0]
    controls = sample.treatment_sets[1]
    if matching is None:
        weights = np.zeros(sample.n)
        weights[treated] = 1.0 / treated.size
        weights[controls] = 1.0 / controls.size
    else:
        weights = implied_weights(matching, sample)
    X = sample.covariates
    out = {}
    for exps in moments:
        if len(exps) != sample.d:
            raise ValidationError(
                f"moment {exps} does not match covariate dimension {sample.d}"
            )
        f = np.prod(X ** np.asarray(exps, dtype=np.float64), axis=1)
        diff = float(np.dot(weights[treated], f[treated]) - np.dot(weights[controls], f[controls]))
        out[moment_name(exps)] = abs(diff)
    return out


@dataclass(frozen=True)
class MatchReport:
    """Flat record of the quality measures for one matching."""

    n: int
    k: int
    n_groups: int
    objectives: dict
    group_stats: GroupStats
    weight_sd: Optional[float] = None
    balance: Optional[dict] = field(default=None)
    att: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"n": self.n, "k": self.k, "n_groups": self.n_groups}
        out.update(self.objectives)
        out["mean_size"] = self.group_stats.mean_size
        out["size_sd"] = self.group_stats.size_sd
        out["pct_dropped"] = self.group_stats.pct_dropped
        if self.weight_sd is not None:
            out["weight_sd"] = self.weight_sd
        if self.balance is not None:
            for name, value in self.balance.items():
                out[f"balance_{name}"] = value
        if self.att is not None:
            out["att"] = self.att
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)


def build_report(
    matching: Matching,
    sample: Sample,
    metric: Metric,
    outcomes=None,
    moments=None,
    lenient: bool = False,
) -> MatchReport:
    """Compute every applicable measure for a matching.

    Treated/control measures (tc objectives, weights, balance, estimate) are
    included only for two-condition samples; the estimate additionally needs
    outcomes. With ``lenient``, measures whose preconditions the matching
    violates (say, a group without controls) are omitted instead of raising,
    which lets arbitrary externally supplied matchings be scored.
    """

    def attempt(fn, *a, **kw):
        if not lenient:
            return fn(*a, **kw)
        try:
            return fn(*a, **kw)
        except ValidationError:
            return None

    objectives = {
        "lmax": objective(matching, sample, metric, "lmax"),
    }
    weight_sd = None
    bal = None
    att = None
    if sample.k == 2:
        for which in ("lmax_tc", "lmean", "lmean_tc", "lsum_tc"):
            value = attempt(objective, matching, sample, metric, which)
            if value is not None:
                objectives[which] = value
        weight_sd = attempt(control_weight_sd, matching, sample)
        bal = attempt(balance, matching, sample, moments=moments)
        if outcomes is not None:
            att = attempt(att_estimate, matching, sample, outcomes)
    return MatchReport(
        n=sample.n,
        k=sample.k,
        n_groups=matching.n_groups,
        objectives=objectives,
        group_stats=group_stats(matching, sample),
        weight_sd=weight_sd,
        balance=bal,
        att=att,
    )
