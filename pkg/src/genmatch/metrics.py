"""Distance metrics over unit covariates.

All supported metrics are evaluated as the euclidean norm in a transformed
coordinate space (identity for ``euclidean`` and ``scalar``, whitened
coordinates for ``mahalanobis``). Using one evaluation path keeps distances
exactly symmetric, makes the triangle inequality hold up to rounding, and
lets every metric share the same kd-tree machinery.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .core import Sample, ValidationError

METRIC_KINDS = ("euclidean", "mahalanobis", "scalar")


@dataclass(frozen=True)
class Metric:
    """A distance metric specification.

    Attributes:
        kind: one of "euclidean", "mahalanobis", "scalar".
        scaling: (d, d) positive-definite scaling matrix for mahalanobis;
            when None, the sample covariance (unbiased, n-1 divisor) is
            estimated at bind time.
    """

    kind: str = "euclidean"
    scaling: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValidationError(f"unknown metric kind {self.kind!r}; expected one of {METRIC_KINDS}")
        if self.scaling is not None:
            if self.kind != "mahalanobis":
                raise ValidationError("scaling is only meaningful for the mahalanobis metric")
            S = np.asarray(self.scaling, dtype=np.float64)
            if S.ndim != 2 or S.shape[0] != S.shape[1]:
                raise ValidationError("scaling must be a square matrix")
            object.__setattr__(self, "scaling", S)

    def bind(self, sample: Sample) -> "BoundMetric":
        """Attach the metric to a sample, precomputing transformed points."""
        X = sample.covariates
        if self.kind == "euclidean":
            points = X
        elif self.kind == "scalar":
            if sample.d != 1:
                raise ValidationError(
                    f"scalar metric requires a single covariate, sample has d={sample.d}"
                )
            points = X
        else:
            S = self.scaling
            if S is None:
                if sample.n < 2:
                    raise ValidationError(
                        "cannot estimate mahalanobis scaling from fewer than 2 units"
                    )
                S = np.cov(X, rowvar=False, ddof=1)
                S = np.atleast_2d(S)
            if S.shape != (sample.d, sample.d):
                raise ValidationError(
                    f"scaling has shape {S.shape}, expected {(sample.d, sample.d)}"
                )
            try:
                C = cholesky(S, lower=True)
            except np.linalg.LinAlgError as e:
                raise ValidationError(f"scaling matrix is not positive definite: {e}") from e
            points = solve_triangular(C, X.T, lower=True).T
            points = np.ascontiguousarray(points)
            points.flags.writeable = False
        return BoundMetric(metric=self, points=points)


@dataclass(frozen=True)
class BoundMetric:
    """A metric bound to a sample; distance = euclidean norm on ``points``."""

    metric: Metric
    points: np.ndarray

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def pair_distance(self, a: int, b: int) -> float:
        diff = self.points[a] - self.points[b]
        return float(np.sqrt(np.dot(diff, diff)))

    def distances_to_many(self, a, targets: np.ndarray) -> np.ndarray:
        """Distances from one point (index or coordinate row) to target rows."""
        q = self.points[a] if np.isscalar(a) else np.asarray(a)
        diff = self.points[targets] - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def cross_distances(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense (len(rows), len(cols)) distance matrix."""
        diff = self.points[rows][:, None, :] - self.points[cols][None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def gather_distances(self, queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Row-wise distances from queries (q,) to candidates (q, m)."""
        diff = self.points[candidates] - self.points[queries][:, None, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def distance(metric: Metric, a: int, b: int, sample: Sample) -> float:
    """Distance between units ``a`` and ``b`` under ``metric``.

    Convenience wrapper that binds the metric on every call; hot paths
    should bind once with :meth:`Metric.bind` and reuse the result.
    """
    n = sample.n
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"unit index out of range for sample of size {n}")
    return metric.bind(sample).pair_distance(a, b)


def make_metric(spec, scaling: Optional[np.ndarray] = None) -> Metric:
    """Build a Metric from a string name or pass an existing Metric through."""
    if isinstance(spec, Metric):
        return spec
    return Metric(kind=str(spec), scaling=scaling)
