"""Construction of the constraint-compatible nearest-neighbor digraph.

Every source unit gets a fixed-width arc list: for each condition j, arcs to
its c_j nearest units of that condition, then arcs to its r nearest remaining
units of any condition, where r tops the total up to the overall group-size
floor. Arc lists are stored as flat (m, width) arrays, one row per source,
which keeps memory linear in the sample size.

Column layout of ``arcs`` / ``dists``: condition blocks in order (c_1 columns
for condition 1, then c_2, ...) followed by the residual block (r columns).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Constraints, InfeasibleError, MatchOptions, Sample, ValidationError
from .metrics import Metric
from .nnsearch import build_index, knn_batch


@dataclass(frozen=True)
class CompatibleDigraph:
    """Fixed out-degree nearest-neighbor digraph satisfying the constraints.

    Sources whose required arcs cannot all be drawn within the caliper are
    flagged infeasible and carry no arcs (row of -1 / inf).
    """

    sample: Sample = field(repr=False)
    constraints: Constraints
    sources: np.ndarray
    arcs: np.ndarray = field(repr=False)
    dists: np.ndarray = field(repr=False)
    feasible: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.arcs.shape[1]

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    def row_of(self) -> np.ndarray:
        """Unit index -> row in ``arcs`` (-1 for non-sources)."""
        row = np.full(self.sample.n, -1, dtype=np.int64)
        row[self.sources] = np.arange(self.n_sources)
        return row

    def closed_neighborhood(self, row: int) -> np.ndarray:
        """N[i] for the source at ``row``: the unit plus its arc targets."""
        if not self.feasible[row]:
            return np.array([], dtype=np.int64)
        return np.union1d(self.arcs[row], self.sources[row])


def nn_subgraph(
    sample: Sample,
    metric: Metric,
    sources,
    targets,
    k: int,
    caliper: Optional[float] = None,
    workers: int = -1,
):
    """Per-source arc lists of the k-nearest-neighbor digraph into ``targets``.

    Returns ``(arcs, dists, counts)`` padded arrays as in
    :func:`genmatch.nnsearch.knn_batch`; self-loops appear only when a source
    is itself a member of ``targets``.
    """
    index = build_index(sample, targets, metric)
    return knn_batch(index, np.asarray(sources, dtype=np.int64), k, caliper=caliper, workers=workers)


def build_compatible_digraph(
    sample: Sample,
    metric: Metric,
    constraints: Constraints,
    options: Optional[MatchOptions] = None,
    workers: int = -1,
) -> CompatibleDigraph:
    """Algorithm steps 1-2: per-condition NN digraphs plus the residual graph.

    The residual arcs are found by fetching each source's ``total`` nearest
    units overall and dropping the ones already reached through a condition
    block, which is equivalent to searching the complement directly but keeps
    the search set fixed.
    """
    opts = options or MatchOptions()
    constraints.validate_for(sample)
    sources = opts.resolved_focus(sample)
    m = sources.size
    width = constraints.width
    cal = opts.caliper_gc

    arcs = np.full((m, width), -1, dtype=np.int64)
    dists = np.full((m, width), np.inf, dtype=np.float64)
    feasible = np.ones(m, dtype=bool)

    col = 0
    for j, c_j in enumerate(constraints.per_treatment):
        if c_j == 0:
            continue
        index_j = build_index(sample, sample.treatment_sets[j], metric)
        ii, dd, counts = knn_batch(index_j, sources, c_j, caliper=cal, workers=workers)
        arcs[:, col : col + c_j] = ii
        dists[:, col : col + c_j] = dd
        if cal is not None:
            feasible &= counts == c_j
        col += c_j

    r = constraints.residual
    if r > 0:
        s = col
        t = constraints.total
        index_all = build_index(sample, np.arange(sample.n), metric)
        ii, dd, _ = knn_batch(index_all, sources, t, caliper=None, workers=workers)
        if s > 0:
            drop = (ii[:, :, None] == arcs[:, None, :s]).any(axis=2)
        else:
            drop = np.zeros_like(ii, dtype=bool)
        # stable compaction: kept candidates first, original order preserved
        key = drop * (t + 1) + np.arange(t)
        order = np.argsort(key, axis=1)[:, :r]
        arcs[:, s:] = np.take_along_axis(ii, order, axis=1)
        dists[:, s:] = np.take_along_axis(dd, order, axis=1)
        if cal is not None:
            feasible &= dists[:, -1] <= cal

    if cal is not None and not feasible.all():
        arcs[~feasible] = -1
        dists[~feasible] = np.inf

    arcs.flags.writeable = False
    dists.flags.writeable = False
    feasible.flags.writeable = False
    return CompatibleDigraph(
        sample=sample,
        constraints=constraints,
        sources=sources,
        arcs=arcs,
        dists=dists,
        feasible=feasible,
    )


def max_arc_weight(g: CompatibleDigraph, cross_treatment_only: bool = False) -> float:
    """Largest arc distance in the digraph.

    This is the certificate the approximation bound rests on: four times this
    value bounds the maximum within-group distance of the produced matching.
    With ``cross_treatment_only`` the maximum is restricted to arcs whose
    endpoints have different treatment conditions (0.0 when no such arc
    exists).
    """
    if not g.feasible.any():
        raise ValidationError("digraph has no arcs: every source is infeasible")
    d = g.dists[g.feasible]
    if not cross_treatment_only:
        return float(d.max())
    w = g.sample.treatment
    cross = w[g.arcs[g.feasible]] != w[g.sources[g.feasible]][:, None]
    if not cross.any():
        return 0.0
    return float(d[cross].max())


def write_edge_list(g: CompatibleDigraph, path) -> None:
    """Debug dump: one ``source target distance`` line per arc."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.flatnonzero(g.feasible):
            src = int(g.sources[row])
            for tgt, d in zip(g.arcs[row], g.dists[row]):
                fh.write(f"{src} {int(tgt)} {float(d)!r}\n")
