"""Seed selection, neighborhood labeling, and residual assignment.

The three final algorithm steps: pick a maximal set of units whose closed
neighborhoods do not overlap (seeds), give each seed's neighborhood a group
label, then attach every remaining unit to the group of a nearby labeled
unit. Group ids follow seed-selection order, so identical inputs always
produce identical labelings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Constraints, MatchOptions, Sample
from .digraph import CompatibleDigraph, build_compatible_digraph
from .metrics import Metric
from .nnsearch import build_index, knn_batch


@dataclass(frozen=True)
class Matching:
    """A partition of (a subset of) the sample into matched groups.

    ``labels[i]`` is the 0-based group id of unit i, or -1 when unassigned.
    ``groups[g]`` lists the members of group g in ascending unit order.
    """

    labels: np.ndarray
    groups: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def unassigned(self) -> np.ndarray:
        return np.flatnonzero(self.labels < 0)

    @classmethod
    def from_labels(cls, labels) -> "Matching":
        """Build from a per-unit label array; any distinct non-negative
        values become dense group ids in sorted order, negatives mean
        unassigned."""
        raw = np.asarray(labels, dtype=np.int64).copy()
        assigned = raw >= 0
        ids = np.unique(raw[assigned])
        dense = np.full(raw.shape[0], -1, dtype=np.int64)
        dense[assigned] = np.searchsorted(ids, raw[assigned])
        order = np.argsort(dense[assigned], kind="stable")
        members = np.flatnonzero(assigned)[order]
        counts = np.bincount(dense[assigned], minlength=ids.size)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        groups = tuple(
            np.sort(members[bounds[g] : bounds[g + 1]]) for g in range(ids.size)
        )
        dense.flags.writeable = False
        return cls(labels=dense, groups=groups)


@dataclass(frozen=True)
class SeedSet:
    """Selected seeds with a snapshot of their closed neighborhoods."""

    seeds: np.ndarray
    rows: np.ndarray
    neighborhoods: np.ndarray = field(repr=False)


def _exclusion_degrees(g: CompatibleDigraph) -> np.ndarray:
    """Per-unit count of units whose closed neighborhoods overlap its own.

    Overlap means sharing an arc target, or one unit being the other's
    target; in matrix form the conflict graph is A A' + A + A' over the arc
    adjacency matrix A.
    """
    from scipy import sparse

    n = g.sample.n
    rows = np.flatnonzero(g.feasible)
    src = np.repeat(g.sources[rows], g.width)
    tgt = g.arcs[rows].ravel()
    A = sparse.csr_matrix(
        (np.ones(src.size, dtype=np.int32), (src, tgt)), shape=(n, n)
    )
    H = (A @ A.T + A + A.T).tocsr()
    deg = H.getnnz(axis=1) - (H.diagonal() != 0)
    return deg.astype(np.int64)


def find_seeds(g: CompatibleDigraph, refined: bool = False) -> SeedSet:
    """Greedy maximal set of sources with pairwise disjoint neighborhoods.

    The base variant scans sources in ascending unit order. The refined
    variant scans in ascending conflict-degree order (fewest conflicts
    first), which tends to yield more seeds and therefore smaller groups.
    Infeasible sources are skipped and never block other candidates.
    """
    width = g.width
    if refined:
        deg = _exclusion_degrees(g)
        scan = np.lexsort((g.sources, deg[g.sources]))
    else:
        scan = range(g.n_sources)

    flat = g.arcs.ravel().tolist()
    sources = g.sources.tolist()
    feasible = g.feasible
    covered = bytearray(g.sample.n)
    seed_rows = []
    push = seed_rows.append
    for row in scan:
        if not feasible[row]:
            continue
        unit = sources[row]
        if covered[unit]:
            continue
        base = row * width
        targets = flat[base : base + width]
        if any(covered[t] for t in targets):
            continue
        push(row)
        covered[unit] = 1
        for t in targets:
            covered[t] = 1
    rows = np.asarray(seed_rows, dtype=np.int64)
    return SeedSet(seeds=g.sources[rows], rows=rows, neighborhoods=g.arcs[rows])


def label_seed_neighborhoods(g: CompatibleDigraph, seeds: SeedSet) -> np.ndarray:
    """Algorithm step 4: one label per seed, shared by its whole neighborhood.

    Returns a per-unit label array with -1 for units outside every seed
    neighborhood. Seed independence guarantees no unit gets two labels.
    """
    labels = np.full(g.sample.n, -1, dtype=np.int64)
    gids = np.arange(seeds.seeds.shape[0], dtype=np.int64)
    labels[seeds.neighborhoods.ravel()] = np.repeat(gids, g.width)
    labels[seeds.seeds] = gids
    return labels


def assign_residual(
    g: CompatibleDigraph,
    labels: np.ndarray,
    sample: Sample,
    metric: Metric,
    options: Optional[MatchOptions] = None,
    workers: int = -1,
) -> Matching:
    """Algorithm step 5: attach unlabeled units to existing groups.

    All assignments are made against the step-4 labeling in a single pass
    (units never adopt a label another unit just received here). In the base
    variant each unlabeled source joins its nearest labeled arc target, ties
    by ascending unit index. With ``global_step5`` every unlabeled unit joins
    the group of the globally nearest labeled unit instead, subject to
    ``caliper_step5``. Units outside a focus set have no arcs and always use
    the global search; infeasible sources stay unassigned in the base
    variant.
    """
    opts = options or MatchOptions()
    labels = np.asarray(labels, dtype=np.int64).copy()
    unlabeled = np.flatnonzero(labels < 0)
    if unlabeled.size == 0:
        return Matching.from_labels(labels)

    row = g.row_of()
    has_arcs = (row[unlabeled] >= 0) & g.feasible[np.maximum(row[unlabeled], 0)]

    new = np.full(unlabeled.shape[0], -1, dtype=np.int64)
    if opts.global_step5:
        global_mask = np.ones(unlabeled.shape[0], dtype=bool)
    else:
        local = unlabeled[has_arcs]
        if local.size:
            rr = row[local]
            cand = g.arcs[rr]
            lab = labels[cand]
            d = np.where(lab >= 0, g.dists[rr], np.inf)
            dmin = d.min(axis=1)
            if not np.isfinite(dmin).all():
                raise AssertionError(
                    "unlabeled source with no labeled arc target; seed maximality violated"
                )
            tied = d == dmin[:, None]
            chosen = np.where(tied, cand, sample.n).min(axis=1)
            new[has_arcs] = labels[chosen]
        # non-sources (outside the focus set) fall back to the global search;
        # caliper-infeasible sources are discarded
        global_mask = ~has_arcs & (row[unlabeled] < 0)

    targets = unlabeled[global_mask]
    if targets.size:
        labeled_units = np.flatnonzero(labels >= 0)
        if labeled_units.size:
            index = build_index(sample, labeled_units, metric)
            ii, _, counts = knn_batch(
                index, targets, 1, caliper=opts.caliper_step5, workers=workers
            )
            got = counts > 0
            picked = np.full(targets.shape[0], -1, dtype=np.int64)
            picked[got] = labels[ii[got, 0]]
            new[global_mask] = picked

    labels[unlabeled] = new
    return Matching.from_labels(labels)


def match_details(
    sample: Sample,
    metric: Metric,
    constraints: Constraints,
    options: Optional[MatchOptions] = None,
    workers: int = -1,
):
    """Run the full pipeline; returns (matching, digraph, seed set)."""
    opts = options or MatchOptions()
    g = build_compatible_digraph(sample, metric, constraints, opts, workers=workers)
    seeds = find_seeds(g, refined=opts.refined_seeds)
    labels = label_seed_neighborhoods(g, seeds)
    matching = assign_residual(g, labels, sample, metric, opts, workers=workers)
    return matching, g, seeds


def full_match(
    sample: Sample,
    metric: Metric,
    constraints: Constraints,
    options: Optional[MatchOptions] = None,
    workers: int = -1,
) -> Matching:
    """Construct a near-optimal generalized full matching.

    Without calipers and with the default focus (all units), the result
    assigns every unit and each group meets the per-condition and total size
    floors; its maximum within-group distance is at most four times that of
    an optimal matching.
    """
    matching, _, _ = match_details(sample, metric, constraints, options, workers=workers)
    return matching


def check_admissible(
    matching: Matching,
    sample: Sample,
    constraints: Constraints,
    require_spanning: bool = True,
) -> list:
    """Audit a matching against the admissibility conditions.

    Returns a list of human-readable violations (empty when admissible):
    spanning (unless disabled), disjoint nonempty groups, per-condition
    minimums, and the total size floor.
    """
    problems = []
    if require_spanning and matching.unassigned.size:
        problems.append(f"{matching.unassigned.size} units are unassigned")
    seen = np.zeros(sample.n, dtype=bool)
    for gid, members in enumerate(matching.groups):
        if members.size == 0:
            problems.append(f"group {gid} is empty")
            continue
        if seen[members].any():
            problems.append(f"group {gid} overlaps another group")
        seen[members] = True
        if (matching.labels[members] != gid).any():
            problems.append(f"group {gid} disagrees with the label array")
        w = sample.treatment[members]
        for j, c in enumerate(constraints.per_treatment):
            have = int((w == j + 1).sum())
            if have < c:
                problems.append(
                    f"group {gid} has {have} units of condition {j + 1}, needs {c}"
                )
        if members.size < constraints.total:
            problems.append(
                f"group {gid} has {members.size} units, needs {constraints.total}"
            )
    return problems
