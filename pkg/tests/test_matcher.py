"""Tests for seed selection, labeling, residual assignment, and full_match.

Covers:
- Hand-traced seed sets and labelings on the line examples
- Seed independence and maximality audits for both seeding variants
- Step-4 label counts equal the summed seed neighborhood sizes
- Residual assignment to the nearest labeled arc target, global variant,
  and caliper-induced unassignment
- Admissibility of full_match outputs on random instances
- The 4x max-arc-weight bound and the two-arc distance to the group seed
- Determinism, one seed per group, groups containing their seed
  neighborhood
- Focus-set matching guarantees
"""
from __future__ import annotations

import numpy as np
import pytest

from genmatch import (
    Constraints,
    MatchOptions,
    Matching,
    Metric,
    assign_residual,
    build_compatible_digraph,
    check_admissible,
    find_seeds,
    full_match,
    label_seed_neighborhoods,
    match_details,
    max_arc_weight,
    objective,
    validate_sample,
)

EUC = Metric("euclidean")
C112 = Constraints.from_tuple((1, 1, 2))


@pytest.fixture(name="line")
def _line_fixture():
    return validate_sample(np.array([[0.0], [1.0], [10.0], [11.0]]), ["T", "C", "T", "C"])


@pytest.fixture(name="line5")
def _line5_fixture():
    # x = 0, 1, 2, 10, 11 with treated at x=0 and x=10
    return validate_sample(
        np.array([[0.0], [1.0], [2.0], [10.0], [11.0]]), ["T", "C", "C", "T", "C"]
    )


def _neighborhood_sets(g, seedset):
    return [
        set(row.tolist()) | {int(u)}
        for u, row in zip(seedset.seeds, seedset.neighborhoods)
    ]


def _audit_seed_properties(g, seedset):
    """Direct audit of the two defining seed properties."""
    hoods = _neighborhood_sets(g, seedset)
    for a in range(len(hoods)):
        for b in range(a + 1, len(hoods)):
            assert not (hoods[a] & hoods[b]), "seed neighborhoods overlap"
    union = set().union(*hoods) if hoods else set()
    chosen = set(seedset.seeds.tolist())
    for row in np.flatnonzero(g.feasible):
        unit = int(g.sources[row])
        if unit in chosen:
            continue
        hood = set(g.arcs[row].tolist()) | {unit}
        assert hood & union, f"unit {unit} could still be added as a seed"


def _random_instance(rng, n, k, cons):
    while True:
        labels = rng.integers(1, k + 1, size=n)
        if all((labels == j + 1).sum() >= c for j, c in enumerate(cons[:-1])):
            break
    return validate_sample(rng.normal(size=(n, 2)), labels), Constraints.from_tuple(cons)


# ---------------------------------------------------------------------------
# find_seeds
# ---------------------------------------------------------------------------


def test_line_seed_scan(line):
    g = build_compatible_digraph(line, EUC, C112)
    seeds = find_seeds(g)
    assert seeds.seeds.tolist() == [0, 2]
    assert _neighborhood_sets(g, seeds) == [{0, 1}, {2, 3}]


def test_single_source_digraph_unique_seed(line):
    g = build_compatible_digraph(line, EUC, C112, MatchOptions(focus_set=[2]))
    seeds = find_seeds(g)
    assert seeds.seeds.tolist() == [2]


@pytest.mark.parametrize("refined", [False, True])
def test_seed_properties_random(refined):
    rng = np.random.default_rng(19)
    for _ in range(10):
        s, cons = _random_instance(rng, 100, 2, (1, 1, 2))
        g = build_compatible_digraph(s, EUC, cons)
        seeds = find_seeds(g, refined=refined)
        _audit_seed_properties(g, seeds)


def test_refined_seeds_prefer_low_conflict_units(line5):
    # both variants are valid; refined ordering must still satisfy the audits
    g = build_compatible_digraph(line5, EUC, C112)
    base = find_seeds(g, refined=False)
    refined = find_seeds(g, refined=True)
    _audit_seed_properties(g, base)
    _audit_seed_properties(g, refined)


# ---------------------------------------------------------------------------
# label_seed_neighborhoods
# ---------------------------------------------------------------------------


def test_line_labeling_covers_everything(line):
    g = build_compatible_digraph(line, EUC, C112)
    seeds = find_seeds(g)
    labels = label_seed_neighborhoods(g, seeds)
    assert labels.tolist() == [0, 0, 1, 1]


def test_single_seed_labels_whole_sample():
    s = validate_sample(np.zeros((4, 1)), ["T", "C", "C", "C"])
    g = build_compatible_digraph(s, EUC, Constraints.from_tuple((1, 3, 4)))
    seeds = find_seeds(g)
    labels = label_seed_neighborhoods(g, seeds)
    assert seeds.seeds.size == 1
    assert (labels == 0).all()


def test_labeled_count_equals_summed_neighborhood_sizes():
    rng = np.random.default_rng(29)
    for _ in range(10):
        s, cons = _random_instance(rng, 60, 2, (1, 1, int(rng.integers(2, 5))))
        g = build_compatible_digraph(s, EUC, cons)
        seeds = find_seeds(g)
        labels = label_seed_neighborhoods(g, seeds)
        expect = sum(len(h) for h in _neighborhood_sets(g, seeds))
        assert int((labels >= 0).sum()) == expect


# ---------------------------------------------------------------------------
# assign_residual
# ---------------------------------------------------------------------------


def test_line5_residual_joins_left_group(line5):
    g = build_compatible_digraph(line5, EUC, C112)
    seeds = find_seeds(g)
    labels = label_seed_neighborhoods(g, seeds)
    assert seeds.seeds.tolist() == [0, 3]
    assert labels[2] == -1  # x=2 is in nobody's neighborhood
    m = assign_residual(g, labels, line5, EUC)
    assert m.labels[2] == m.labels[0] == m.labels[1]
    assert m.unassigned.size == 0


def test_line5_global_step5_with_caliper_leaves_unit_unassigned(line5):
    g = build_compatible_digraph(line5, EUC, C112)
    seeds = find_seeds(g)
    labels = label_seed_neighborhoods(g, seeds)
    opts = MatchOptions(global_step5=True, caliper_step5=0.5)
    m = assign_residual(g, labels, line5, EUC, opts)
    assert m.unassigned.tolist() == [2]


def test_global_step5_picks_globally_nearest_labeled_unit():
    # base step 5 must follow an arc; the global variant may do better
    X = np.array([[0.0], [1.0], [3.0], [3.9], [10.0], [11.0]])
    s = validate_sample(X, ["T", "C", "C", "C", "T", "C"])
    g = build_compatible_digraph(s, EUC, C112)
    seeds = find_seeds(g)
    labels = label_seed_neighborhoods(g, seeds)
    base = assign_residual(g, labels, s, EUC)
    glob = assign_residual(g, labels, s, EUC, MatchOptions(global_step5=True))
    assert base.unassigned.size == 0 and glob.unassigned.size == 0
    assert objective(glob, s, EUC, "lmax") <= objective(base, s, EUC, "lmax") + 1e-12


# ---------------------------------------------------------------------------
# full_match
# ---------------------------------------------------------------------------


def test_full_match_line(line):
    m = full_match(line, EUC, C112)
    assert [g.tolist() for g in m.groups] == [[0, 1], [2, 3]]
    assert objective(m, line, EUC, "lmax") == 1.0


def test_full_match_identical_points():
    s = validate_sample(np.zeros((8, 2)), [1, 2] * 4)
    m = full_match(s, EUC, C112)
    assert m.unassigned.size == 0
    assert objective(m, s, EUC, "lmax") == 0.0
    assert not check_admissible(m, s, C112)


@pytest.mark.parametrize("seed", range(8))
def test_full_match_admissibility_random(seed):
    rng = np.random.default_rng(500 + seed)
    k = int(rng.integers(2, 4))
    cons = tuple(int(rng.integers(0, 3)) for _ in range(k))
    if sum(cons) == 0:
        cons = (1,) + cons[1:]
    t = int(rng.integers(max(1, sum(cons)), sum(cons) + 4))
    s, constraints = _random_instance(rng, int(rng.integers(10, 120)), k, cons + (t,))
    m = full_match(s, EUC, constraints)
    problems = check_admissible(m, s, constraints)
    assert not problems, problems


def test_four_lambda_bound_and_geodesic_structure():
    rng = np.random.default_rng(99)
    for _ in range(10):
        s, cons = _random_instance(rng, 80, 2, (1, 1, 3))
        m, g, seeds = match_details(s, EUC, cons)
        lam = max_arc_weight(g)
        assert objective(m, s, EUC, "lmax") <= 4.0 * lam + 1e-12
        # every unit sits within two arcs of its group's seed
        hoods = _neighborhood_sets(g, seeds)
        row_of = g.row_of()
        for unit in range(s.n):
            gid = m.labels[unit]
            seed = int(seeds.seeds[gid])
            if unit == seed or unit in hoods[gid]:
                continue
            own = set(g.arcs[row_of[unit]].tolist()) | {unit}
            assert own & hoods[gid], f"unit {unit} is too far from seed {seed}"


def test_full_match_deterministic():
    rng = np.random.default_rng(123)
    s, cons = _random_instance(rng, 150, 2, (1, 1, 2))
    a = full_match(s, EUC, cons)
    b = full_match(s, EUC, cons)
    assert np.array_equal(a.labels, b.labels)
    opts = MatchOptions(refined_seeds=True, global_step5=True)
    c = full_match(s, EUC, cons, opts)
    d = full_match(s, EUC, cons, opts)
    assert np.array_equal(c.labels, d.labels)


def test_one_seed_per_group_and_neighborhood_containment():
    rng = np.random.default_rng(7)
    s, cons = _random_instance(rng, 90, 3, (1, 1, 1, 3))
    m, g, seeds = match_details(s, EUC, cons)
    assert seeds.seeds.size == m.n_groups
    hoods = _neighborhood_sets(g, seeds)
    for gid, members in enumerate(m.groups):
        mem = set(members.tolist())
        assert int(seeds.seeds[gid]) in mem
        assert hoods[gid] <= mem
    # seeds fall in distinct groups by construction
    assert len({int(m.labels[u]) for u in seeds.seeds}) == seeds.seeds.size


def test_focus_set_guarantees_assignment_of_focus_units():
    rng = np.random.default_rng(404)
    s, cons = _random_instance(rng, 60, 2, (1, 1, 2))
    treated = s.treatment_sets[0]
    opts = MatchOptions(focus_set=treated)
    m = full_match(s, EUC, cons, opts)
    assert (m.labels[treated] >= 0).all()
    # groups still meet the constraints even though spanning is not required
    problems = check_admissible(m, s, cons, require_spanning=False)
    assert not problems, problems
    # without a step-5 caliper the leftovers are swept in globally
    assert m.unassigned.size == 0


def test_focus_set_with_step5_caliper_drops_far_nonfocus_units():
    X = np.array([[0.0], [1.0], [50.0]])
    s = validate_sample(X, ["T", "C", "C"])
    opts = MatchOptions(focus_set=np.array([0, 1]), caliper_step5=5.0)
    m = full_match(s, EUC, C112, opts)
    assert m.labels[0] == m.labels[1] == 0
    assert m.unassigned.tolist() == [2]


def test_caliper_gc_discards_infeasible_units_in_base_mode():
    X = np.array([[0.0], [1.0], [50.0], [51.0], [200.0]])
    s = validate_sample(X, ["T", "C", "T", "C", "C"])
    m = full_match(s, EUC, C112, MatchOptions(caliper_gc=5.0))
    assert m.unassigned.tolist() == [4]
    assert m.labels[0] == m.labels[1]
    assert m.labels[2] == m.labels[3]


def test_matching_from_labels_normalizes_ids():
    m = Matching.from_labels([7, 7, -1, 3])
    assert m.labels.tolist() == [1, 1, -1, 0]
    assert [g.tolist() for g in m.groups] == [[3], [0, 1]]
    assert m.unassigned.tolist() == [2]
