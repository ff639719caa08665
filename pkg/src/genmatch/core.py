"""Domain types: validated samples, matching constraints, and match options.

Unit indices are 0-based throughout. Treatment conditions are the dense
integers ``1..k``; for two-condition data, condition 1 plays the role of
"treated" and condition 2 of "control" in all estimator-facing code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GenmatchError(ValueError):
    """Base class for errors raised by this package."""


class ValidationError(GenmatchError):
    """Raised when input data fails validation."""


class InfeasibleError(GenmatchError):
    """Raised when matching constraints cannot be satisfied."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Sample:
    """A validated sample of units with covariates and treatment labels.

    Attributes:
        covariates: float64 array of shape (n, d); read-only.
        treatment: int64 array of shape (n,) with values in 1..k; read-only.
        treatment_sets: tuple of k index arrays, one per condition, jointly
            partitioning 0..n-1.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    treatment_sets: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def k(self) -> int:
        return len(self.treatment_sets)

    def condition_counts(self) -> np.ndarray:
        """Number of units per condition, indexed 0..k-1."""
        return np.array([len(s) for s in self.treatment_sets], dtype=np.int64)


def validate_sample(covariates, treatment, label_order: Optional[Sequence] = None) -> Sample:
    """Validate raw inputs and return an immutable :class:`Sample`.

    Covariates must be a rectangular table of finite reals (a 1-d array is
    treated as a single column). Treatment labels may be any hashable values;
    they are re-indexed to dense conditions 1..k in first-appearance order,
    or in the order given by ``label_order`` when supplied.
    """
    X = np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValidationError(f"covariates must be 2-dimensional, got ndim={X.ndim}")
    n, d = X.shape
    if n < 1:
        raise ValidationError("sample is empty")
    if d < 1:
        raise ValidationError("sample has no covariates")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValidationError(
            f"non-finite covariate at row {bad[0]}, column {bad[1]}"
        )

    labels = np.asarray(treatment)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ValidationError(
            f"treatment must be a 1-d array of length {n}, got shape {labels.shape}"
        )

    if label_order is None:
        # dense re-indexing in first-appearance order
        seen: dict = {}
        for v in labels.tolist():
            if v not in seen:
                seen[v] = len(seen) + 1
        mapping = seen
    else:
        mapping = {v: j + 1 for j, v in enumerate(label_order)}
        unknown = set(labels.tolist()) - set(mapping)
        if unknown:
            raise ValidationError(f"treatment labels {sorted(map(str, unknown))} not in label_order")

    w = np.fromiter((mapping[v] for v in labels.tolist()), dtype=np.int64, count=n)
    k = len(mapping)
    sets = tuple(
        _readonly(np.flatnonzero(w == j + 1).astype(np.int64)) for j in range(k)
    )
    X = _readonly(np.ascontiguousarray(X))
    return Sample(covariates=X, treatment=_readonly(w), treatment_sets=sets)


@dataclass(frozen=True)
class Constraints:
    """Matched-group size constraints: c_1..c_k per condition plus a total.

    The residual ``r = max(0, total - sum(per_treatment))`` is the number of
    any-condition arcs needed beyond the per-condition ones; ``width`` is the
    fixed out-degree of the compatible digraph, max(total, sum(per_treatment)).
    """

    per_treatment: tuple
    total: int

    def __post_init__(self):
        object.__setattr__(self, "per_treatment", tuple(int(c) for c in self.per_treatment))
        object.__setattr__(self, "total", int(self.total))
        if len(self.per_treatment) < 1:
            raise ValidationError("constraints need at least one condition")
        if any(c < 0 for c in self.per_treatment) or self.total < 0:
            raise ValidationError("constraints must be nonnegative")
        if sum(self.per_treatment) == 0 and self.total == 0:
            raise ValidationError("constraints are vacuous: all zero")

    @property
    def k(self) -> int:
        return len(self.per_treatment)

    @property
    def residual(self) -> int:
        return max(0, self.total - sum(self.per_treatment))

    @property
    def width(self) -> int:
        return sum(self.per_treatment) + self.residual

    @classmethod
    def from_tuple(cls, values: Sequence[int]) -> "Constraints":
        values = tuple(int(v) for v in values)
        if len(values) < 2:
            raise ValidationError("constraint tuple needs c_1..c_k and a total")
        return cls(per_treatment=values[:-1], total=values[-1])

    def as_tuple(self) -> tuple:
        return self.per_treatment + (self.total,)

    def validate_for(self, sample: Sample) -> None:
        """Raise InfeasibleError if no admissible matching can exist."""
        if self.k != sample.k:
            raise ValidationError(
                f"constraints specify {self.k} conditions but sample has {sample.k}"
            )
        counts = sample.condition_counts()
        for j, c in enumerate(self.per_treatment):
            if counts[j] < c:
                raise InfeasibleError(
                    f"condition {j + 1} has {counts[j]} units but constraint requires {c}"
                )
        need = max(self.total, sum(self.per_treatment))
        if sample.n < need:
            raise InfeasibleError(
                f"sample has {sample.n} units but a single group needs {need}"
            )


@dataclass(frozen=True)
class MatchOptions:
    """Optional refinements of the matching algorithm.

    Attributes:
        refined_seeds: pick seeds in fewest-conflicts-first order instead of
            ascending index order.
        global_step5: assign leftover units to the globally nearest labeled
            unit instead of the nearest labeled unit among their arc targets.
        caliper_gc: maximum arc length in the compatible digraph; units whose
            required arcs cannot all fit are flagged infeasible and dropped.
        caliper_step5: maximum assignment distance in the final step; only
            used for global assignment.
        focus_set: unit indices guaranteed group membership; other units are
            assigned only in the final step (or as arc targets).
    """

    refined_seeds: bool = False
    global_step5: bool = False
    caliper_gc: Optional[float] = None
    caliper_step5: Optional[float] = None
    focus_set: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("caliper_gc", "caliper_step5"):
            v = getattr(self, name)
            if v is not None:
                v = float(v)
                if not np.isfinite(v) or v <= 0.0:
                    raise ValidationError(f"{name} must be a strictly positive real, got {v}")
                object.__setattr__(self, name, v)
        if self.focus_set is not None:
            focus = np.unique(np.asarray(self.focus_set, dtype=np.int64))
            if focus.size == 0:
                raise ValidationError("focus_set is empty")
            object.__setattr__(self, "focus_set", _readonly(focus))

    def resolved_focus(self, sample: Sample) -> np.ndarray:
        """Focus set as a validated index array (defaults to all units)."""
        if self.focus_set is None:
            return np.arange(sample.n, dtype=np.int64)
        focus = self.focus_set
        if focus[0] < 0 or focus[-1] >= sample.n:
            raise ValidationError("focus_set contains out-of-range unit indices")
        return focus
