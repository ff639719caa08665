"""Exact k-nearest-neighbor queries against a fixed search set.

Candidate ordering is the strict total order (distance, self-loop first,
ascending unit index), so every query has a unique answer and repeated runs
are reproducible. Two backends produce identical results: a kd-tree
(scipy.spatial.cKDTree over the metric's transformed coordinates, used for
low-dimensional data) and a blocked linear scan. The kd-tree is only a
candidate generator; distances and ordering always come from the metric
itself, with a tie-safety check that widens the candidate pool in the rare
case the requested neighbor count lands inside a run of equal distances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import InfeasibleError, Sample, ValidationError
from .metrics import BoundMetric, Metric

KDTREE_MAX_DIM = 10
_TIE_BUFFER = 4
_TIE_RTOL = 1e-9
_SCAN_BLOCK = 65536


@dataclass(frozen=True)
class NnIndex:
    """An immutable search index over a fixed set of units."""

    search_set: np.ndarray
    bound: BoundMetric
    backend: str
    tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.search_set.shape[0]


def build_index(sample: Sample, search_set, metric: Metric, backend: str = "auto") -> NnIndex:
    """Build an exact NN index over ``search_set`` (unit indices).

    backend: "auto" picks a kd-tree for d <= 10 and a linear scan otherwise;
    "kdtree" / "linear" force the choice.
    """
    members = np.asarray(search_set, dtype=np.int64).ravel()
    if members.size == 0:
        raise ValidationError("search set is empty")
    if members.min() < 0 or members.max() >= sample.n:
        raise ValidationError("search set contains out-of-range unit indices")
    if np.unique(members).size != members.size:
        raise ValidationError("search set contains duplicate unit indices")
    bound = metric.bind(sample)
    if backend == "auto":
        backend = "kdtree" if bound.d <= KDTREE_MAX_DIM else "linear"
    if backend not in ("kdtree", "linear"):
        raise ValidationError(f"unknown backend {backend!r}")
    tree = cKDTree(bound.points[members]) if backend == "kdtree" else None
    members = members.copy()
    members.flags.writeable = False
    return NnIndex(search_set=members, bound=bound, backend=backend, tree=tree)


def _order_candidates(index: NnIndex, queries: np.ndarray, cand: np.ndarray):
    """Sort candidate units row-wise by (distance, self first, index)."""
    dist = index.bound.gather_distances(queries, cand)
    not_self = (cand != queries[:, None]).view(np.int8)
    order = np.lexsort((cand, not_self, dist), axis=-1)
    rows = np.arange(cand.shape[0])[:, None]
    return cand[rows, order], dist[rows, order]


def _query_linear(index: NnIndex, queries: np.ndarray, k: int):
    members = index.search_set
    out_idx = np.empty((queries.shape[0], k), dtype=np.int64)
    out_dist = np.empty((queries.shape[0], k), dtype=np.float64)
    block = max(1, _SCAN_BLOCK // max(1, members.size))
    for lo in range(0, queries.shape[0], block):
        q = queries[lo : lo + block]
        cand = np.broadcast_to(members, (q.shape[0], members.size))
        ci, cd = _order_candidates(index, q, cand)
        out_idx[lo : lo + block] = ci[:, :k]
        out_dist[lo : lo + block] = cd[:, :k]
    return out_idx, out_dist


def _query_kdtree(index: NnIndex, queries: np.ndarray, k: int, workers: int):
    members = index.search_set
    size = members.size
    qpts = index.bound.points[queries]
    kq = min(k + _TIE_BUFFER, size)
    _, pos = index.tree.query(qpts, k=kq, workers=workers)
    pos = pos.reshape(queries.shape[0], kq)

    out_idx = np.empty((queries.shape[0], k), dtype=np.int64)
    out_dist = np.empty((queries.shape[0], k), dtype=np.float64)
    block = max(1, _SCAN_BLOCK // kq)
    for lo in range(0, queries.shape[0], block):
        q = queries[lo : lo + block]
        ci, cd = _order_candidates(index, q, members[pos[lo : lo + block]])
        # Safe when the k-th distance is clearly inside the candidate pool;
        # otherwise equal-distance members might sit just outside it.
        if kq < size:
            unsafe = cd[:, k - 1] >= cd[:, kq - 1] * (1.0 - _TIE_RTOL)
            for r in np.flatnonzero(unsafe):
                ci[r, :k], cd[r, :k] = _query_row_escalate(index, q[r], k, kq)
        out_idx[lo : lo + block] = ci[:, :k]
        out_dist[lo : lo + block] = cd[:, :k]
    return out_idx, out_dist


def _query_row_escalate(index: NnIndex, query: int, k: int, kq: int):
    """Re-run one query with a growing candidate pool until tie-safe."""
    size = index.size
    while True:
        kq = min(2 * kq, size)
        _, pos = index.tree.query(index.bound.points[query], k=kq)
        cand = index.search_set[np.atleast_1d(pos)].reshape(1, kq)
        ci, cd = _order_candidates(index, np.array([query]), cand)
        if kq == size or cd[0, k - 1] < cd[0, kq - 1] * (1.0 - _TIE_RTOL):
            return ci[0, :k], cd[0, :k]


def knn_batch(
    index: NnIndex,
    queries,
    k: int,
    caliper: Optional[float] = None,
    workers: int = -1,
):
    """Exact k nearest members for each query unit.

    Returns ``(idx, dist, counts)`` with shapes (q, k), (q, k), (q,). Rows are
    ordered by (distance, self first, ascending index). With a caliper, only
    members at distance <= caliper count; entries past ``counts[i]`` are
    padded with -1 / inf. Without a caliper, ``k`` larger than the search set
    raises :class:`InfeasibleError`.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    queries = np.asarray(queries, dtype=np.int64).ravel()
    if caliper is None and k > index.size:
        raise InfeasibleError(
            f"requested {k} neighbors from a search set of {index.size}"
        )
    kk = min(k, index.size)
    if index.backend == "kdtree":
        idx, dist = _query_kdtree(index, queries, kk, workers)
    else:
        idx, dist = _query_linear(index, queries, kk)
    if kk < k:
        idx = np.pad(idx, ((0, 0), (0, k - kk)), constant_values=-1)
        dist = np.pad(dist, ((0, 0), (0, k - kk)), constant_values=np.inf)
    if caliper is None:
        counts = np.full(queries.shape[0], kk, dtype=np.int64)
    else:
        within = dist <= caliper
        counts = within.sum(axis=1)
        idx[~within] = -1
        dist[~within] = np.inf
    return idx, dist, counts


def knn(index: NnIndex, query: int, k: int, caliper: Optional[float] = None) -> np.ndarray:
    """The k exact nearest members of the search set to ``query``.

    The query unit itself, when a member, comes first at distance zero. With
    a caliper, members beyond it are dropped and fewer than k indices may
    return.
    """
    idx, _, counts = knn_batch(index, [query], k, caliper=caliper)
    return idx[0, : counts[0]]


def knn_excluding(
    index: NnIndex,
    query: int,
    k: int,
    excluded,
    caliper: Optional[float] = None,
) -> np.ndarray:
    """As :func:`knn` but skipping units in ``excluded``.

    Uses the widen-then-filter rewrite (fetch k + |excluded| neighbors, drop
    the excluded ones) when that fits in the search set, and a filtered full
    ranking otherwise.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    excluded = np.asarray(list(excluded) if isinstance(excluded, (set, frozenset)) else excluded,
                          dtype=np.int64).ravel()
    kq = k + excluded.size
    if kq > index.size:
        kq = index.size
    idx, _, counts = knn_batch(index, [query], kq, caliper=caliper)
    row = idx[0, : counts[0]]
    keep = row[~np.isin(row, excluded)]
    if caliper is None and keep.size < k:
        raise InfeasibleError(
            f"requested {k} neighbors but only {keep.size} non-excluded members exist"
        )
    return keep[:k]
