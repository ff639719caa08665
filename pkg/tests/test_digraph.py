"""Tests for the compatible nearest-neighbor digraph.

Covers:
- Hand-enumerated arc lists on the four-point line
- Self-loop priority in condition subgraphs and the residual block
- Closed-neighborhood counts meeting every constraint (audited directly)
- Arc-disjointness of the condition blocks and the residual block
- Per-source minimality of the maximum arc distance (greedy reconstruction)
- max_arc_weight, its cross-condition restriction, and the upper bound by
  the brute-force optimum on small instances
- Caliper marking sources infeasible
"""
from __future__ import annotations

import numpy as np
import pytest

from genmatch import (
    Constraints,
    InfeasibleError,
    MatchOptions,
    Metric,
    ValidationError,
    build_compatible_digraph,
    max_arc_weight,
    nn_subgraph,
    optimal_matching_bruteforce,
    validate_sample,
)

EUC = Metric("euclidean")


@pytest.fixture(name="line")
def _line_fixture():
    return validate_sample(np.array([[0.0], [1.0], [10.0], [11.0]]), ["T", "C", "T", "C"])


def _neighborhood(g, row):
    return set(g.arcs[row].tolist()) | {int(g.sources[row])}


def _audit_constraint_counts(g, sample, constraints):
    """Direct check of the closed-neighborhood guarantee: every feasible
    source sees at least c_j units of condition j and t units in total."""
    w = sample.treatment
    for row in np.flatnonzero(g.feasible):
        hood = _neighborhood(g, row)
        assert len(hood) >= constraints.total
        for j, c in enumerate(constraints.per_treatment):
            have = sum(1 for u in hood if w[u] == j + 1)
            assert have >= c, f"source {g.sources[row]}: {have} < c_{j + 1}={c}"


def _random_instance(rng, n, k, cons):
    while True:
        labels = rng.integers(1, k + 1, size=n)
        if all((labels == j).sum() >= c for j, c in zip(range(1, k + 1), cons[:-1])):
            break
    X = rng.normal(size=(n, 2))
    return validate_sample(X, labels), Constraints.from_tuple(cons)


# ---------------------------------------------------------------------------
# nn_subgraph
# ---------------------------------------------------------------------------


def test_nn_subgraph_line_to_treated(line):
    arcs, dists, counts = nn_subgraph(line, EUC, sources=np.arange(4), targets=[0, 2], k=1)
    assert arcs[:, 0].tolist() == [0, 0, 2, 2]
    assert dists[:, 0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert counts.tolist() == [1, 1, 1, 1]


def test_nn_subgraph_exhaustive_k(line):
    arcs, _, _ = nn_subgraph(line, EUC, sources=np.arange(4), targets=[1, 3], k=2)
    for row in arcs:
        assert sorted(row.tolist()) == [1, 3]


def test_nn_subgraph_single_self_loop(line):
    arcs, dists, _ = nn_subgraph(line, EUC, sources=[2], targets=[2], k=1)
    assert arcs.tolist() == [[2]] and dists.tolist() == [[0.0]]


# ---------------------------------------------------------------------------
# build_compatible_digraph
# ---------------------------------------------------------------------------


def test_line_digraph_matches_hand_enumeration(line):
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)))
    expected = {0: {0, 1}, 1: {1, 0}, 2: {2, 3}, 3: {3, 2}}
    for row, src in enumerate(g.sources):
        assert set(g.arcs[row].tolist()) == expected[int(src)]
    assert g.feasible.all()
    assert g.width == 2


def test_identical_points_zero_arc_distances():
    s = validate_sample(np.zeros((6, 2)), [1, 2, 1, 2, 1, 2])
    g = build_compatible_digraph(s, EUC, Constraints.from_tuple((1, 1, 2)))
    assert np.all(g.dists == 0.0)
    assert max_arc_weight(g) == 0.0


def test_closed_neighborhoods_meet_constraints_random():
    rng = np.random.default_rng(77)
    s, cons = _random_instance(rng, 50, 3, (2, 1, 1, 6))
    g = build_compatible_digraph(s, EUC, cons)
    _audit_constraint_counts(g, s, cons)


@pytest.mark.parametrize("seed", range(5))
def test_closed_neighborhoods_meet_constraints_sweep(seed):
    rng = np.random.default_rng(1000 + seed)
    k = int(rng.integers(2, 4))
    cons = tuple(int(rng.integers(0, 3)) for _ in range(k))
    if sum(cons) == 0:
        cons = (1,) + cons[1:]
    t = int(rng.integers(max(1, sum(cons)), sum(cons) + 4))
    s, constraints = _random_instance(rng, int(rng.integers(12, 80)), k, cons + (t,))
    g = build_compatible_digraph(s, EUC, constraints)
    _audit_constraint_counts(g, s, constraints)


def test_residual_block_is_arc_disjoint_from_condition_blocks(line):
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 3)))
    s = 2  # condition blocks occupy the first two columns
    assert g.width == 3
    for row in range(g.n_sources):
        gw = set(g.arcs[row, :s].tolist())
        gr = set(g.arcs[row, s:].tolist())
        assert not (gw & gr)
        assert len(gw) + len(gr) == g.width


def test_residual_self_loop_when_condition_block_skips_self():
    # unit 0 is the only treated unit; controls need no treated arcs when
    # c_treated = 0, so their residual picks the self-loop first
    s = validate_sample(np.array([[0.0], [5.0], [6.0]]), ["T", "C", "C"])
    g = build_compatible_digraph(s, EUC, Constraints.from_tuple((0, 1, 2)))
    for row, src in enumerate(g.sources):
        assert int(src) in set(g.arcs[row].tolist())


def test_infeasible_constraints_raise(line):
    with pytest.raises(InfeasibleError):
        build_compatible_digraph(line, EUC, Constraints.from_tuple((3, 1, 4)))


def test_caliper_marks_sources_infeasible(line):
    opts = MatchOptions(caliper_gc=0.1)
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)), opts)
    assert not g.feasible.any()
    assert np.all(g.arcs == -1)
    # a wide caliper changes nothing
    opts = MatchOptions(caliper_gc=50.0)
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)), opts)
    assert g.feasible.all()


def test_caliper_partial_infeasibility():
    # the outlier pair can only reach the cluster at distance >= 8
    X = np.array([[0.0], [1.0], [0.5], [9.0], [9.5]])
    s = validate_sample(X, ["T", "C", "C", "T", "C"])
    opts = MatchOptions(caliper_gc=2.0)
    g = build_compatible_digraph(s, EUC, Constraints.from_tuple((1, 1, 2)), opts)
    feas = {int(u) for u in g.sources[g.feasible]}
    assert feas == {0, 1, 2, 3, 4} - {4} or feas == {0, 1, 2, 3, 4}


def test_focus_set_restricts_sources(line):
    opts = MatchOptions(focus_set=[0, 2])
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)), opts)
    assert g.sources.tolist() == [0, 2]
    assert g.arcs.shape == (2, 2)


# ---------------------------------------------------------------------------
# minimality and weight bounds
# ---------------------------------------------------------------------------


def _greedy_reconstruction_max(sample, bound, constraints, source):
    """Independent per-source rebuild: nearest c_j of each condition, then
    the r nearest remaining units, by full sort."""
    n = sample.n
    d = np.array([bound.pair_distance(source, j) for j in range(n)])
    keys = sorted(range(n), key=lambda j: (d[j], j != source, j))
    chosen = []
    for j, c in enumerate(constraints.per_treatment):
        of_cond = [u for u in keys if sample.treatment[u] == j + 1]
        chosen.extend(of_cond[:c])
    rest = [u for u in keys if u not in set(chosen)]
    chosen.extend(rest[: constraints.residual])
    return max(d[u] for u in chosen) if chosen else 0.0


def test_per_source_minimality_of_max_arc():
    rng = np.random.default_rng(31)
    for _ in range(5):
        s, cons = _random_instance(rng, 30, 2, (1, 1, int(rng.integers(2, 5))))
        bound = EUC.bind(s)
        g = build_compatible_digraph(s, EUC, cons)
        for row in range(g.n_sources):
            mine = g.dists[row].max()
            rebuilt = _greedy_reconstruction_max(s, bound, cons, int(g.sources[row]))
            assert mine == pytest.approx(rebuilt, rel=1e-12, abs=1e-12)


def test_max_arc_weight_line(line):
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)))
    assert max_arc_weight(g) == 1.0
    assert max_arc_weight(g, cross_treatment_only=True) == 1.0


def test_max_arc_weight_bounded_by_bruteforce_optimum():
    rng = np.random.default_rng(3)
    cons = Constraints.from_tuple((1, 1, 2))
    for _ in range(20):
        labels = np.array([1, 2] * 5)
        X = rng.normal(size=(10, 2))
        s = validate_sample(X, labels)
        g = build_compatible_digraph(s, EUC, cons)
        best = optimal_matching_bruteforce(s, EUC, cons, which="lmax")
        assert max_arc_weight(g) <= best.value + 1e-12
        best_tc = optimal_matching_bruteforce(s, EUC, cons, which="lmax_tc")
        assert max_arc_weight(g, cross_treatment_only=True) <= best_tc.value + 1e-12


def test_max_arc_weight_needs_arcs(line):
    opts = MatchOptions(caliper_gc=0.01)
    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)), opts)
    with pytest.raises(ValidationError):
        max_arc_weight(g)


def test_write_edge_list(tmp_path, line):
    from genmatch import write_edge_list

    g = build_compatible_digraph(line, EUC, Constraints.from_tuple((1, 1, 2)))
    path = tmp_path / "edges.txt"
    write_edge_list(g, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 8  # 4 sources x width 2
    src, tgt, dist = lines[0].split()
    assert src == "0" and tgt in {"0", "1"}
    assert float(dist) in {0.0, 1.0}
