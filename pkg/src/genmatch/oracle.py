"""Ground-truth optimal matchings by exhaustive partition search, plus
simple greedy reference matchers.

The exhaustive search enumerates set partitions in restricted-growth order
and is only meant for tiny samples (finding an optimal matching is NP-hard
in general). Branches are cut when the growing partition can no longer be
completed admissibly, and, for monotone objectives, when the partial
objective already matches the incumbent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InfeasibleError, Sample, Constraints, ValidationError
from .matcher import Matching
from .metrics import Metric
from .nnsearch import build_index, knn_batch

ORACLE_SIZE_CAP = 13
BASELINE_METHODS = ("greedy_1to1", "replacement_1to1", "greedy_1tok")
_MONOTONE = ("lmax", "lmax_tc", "lsum_tc")


@dataclass(frozen=True)
class OracleResult:
    """Globally optimal matching for the requested objective."""

    matching: Matching
    value: float
    n_examined: int


def optimal_matching_bruteforce(
    sample: Sample,
    metric: Metric,
    constraints: Constraints,
    which: str = "lmax",
    size_cap: int = ORACLE_SIZE_CAP,
) -> OracleResult:
    """Minimize an objective over every admissible partition of the sample.

    ``n_examined`` counts the complete admissible partitions the pruned
    search reached. Ties are broken toward the partition whose
    restricted-growth encoding comes first, so results are reproducible.
    """
    n = sample.n
    if n > size_cap:
        raise ValidationError(
            f"exhaustive search is capped at {size_cap} units, sample has {n}"
        )
    constraints.validate_for(sample)
    if which not in ("lmax", "lmax_tc", "lmean", "lmean_tc", "lsum_tc"):
        raise ValidationError(f"unknown objective {which!r}")
    if which.endswith("_tc") and sample.k != 2:
        raise ValidationError(f"{which} requires a two-condition sample")

    bound = metric.bind(sample)
    D = bound.cross_distances(np.arange(n), np.arange(n))
    W = (sample.treatment - 1).tolist()
    k = sample.k
    c = list(constraints.per_treatment)
    t = constraints.total
    monotone = which in _MONOTONE

    # units of each condition remaining at positions >= p
    rem = np.zeros((n + 1, k), dtype=np.int64)
    for p in range(n - 1, -1, -1):
        rem[p] = rem[p + 1]
        rem[p, W[p]] += 1
    rem_total = rem.sum(axis=1)

    assignment = [-1] * n
    members: list = []          # per-block member lists
    counts: list = []           # per-block per-condition counts
    block_need: list = []       # per-block remaining demand (typed + generic)
    cond_need = [0] * k         # summed per-condition deficits
    state = {"best_value": None, "best_assignment": None, "examined": 0}

    def leaf_value(partial: float) -> float:
        if monotone:
            return partial
        total = 0.0
        n_treated = rem[0][0]
        for mem, cnt in zip(members, counts):
            idx = np.array(mem)
            sub = D[np.ix_(idx, idx)]
            iu, ju = np.triu_indices(len(mem), k=1)
            d = sub[iu, ju]
            if which == "lmean":
                if d.size:
                    total += (cnt[0] / n_treated) * float(d.mean())
            else:  # lmean_tc
                if cnt[0] == 0:
                    continue
                wm = np.array([W[u] for u in mem])
                dc = d[wm[iu] != wm[ju]]
                if dc.size == 0:
                    return np.inf
                total += (cnt[0] / n_treated) * float(dc.mean())
        return total

    sum_c = sum(c)
    empty_need = max(sum_c, t)

    def recurse(p: int, partial: float, total_need: int) -> None:
        if p == n:
            state["examined"] += 1
            value = leaf_value(partial)
            if state["best_value"] is None or value < state["best_value"]:
                state["best_value"] = value
                state["best_assignment"] = assignment.copy()
            return
        wp = W[p]
        n_blocks = len(members)
        for b in range(n_blocks + 1):
            opened = b == n_blocks
            if opened:
                # a fresh block demands every typed minimum plus the size floor
                members.append([])
                counts.append([0] * k)
                block_need.append(empty_need)
                for j in range(k):
                    cond_need[j] += c[j]
                total_here = total_need + empty_need
            else:
                total_here = total_need
            mem = members[b]
            cnt = counts[b]

            # incremental objective
            if which == "lmax":
                worst = max((D[p][q] for q in mem), default=0.0)
                new_partial = worst if worst > partial else partial
            elif which == "lmax_tc":
                worst = max((D[p][q] for q in mem if W[q] != wp), default=0.0)
                new_partial = worst if worst > partial else partial
            elif which == "lsum_tc":
                new_partial = partial + sum(D[p][q] for q in mem if W[q] != wp)
            else:
                new_partial = partial

            if not (
                monotone
                and state["best_value"] is not None
                and new_partial >= state["best_value"]
            ):
                # incremental demand bookkeeping
                old_need = block_need[b]
                old_typed = cnt[wp] < c[wp]
                mem.append(p)
                cnt[wp] += 1
                typed = sum(max(0, cj - x) for cj, x in zip(c, cnt))
                new_need = max(typed, t - len(mem))
                block_need[b] = new_need
                if old_typed:
                    cond_need[wp] -= 1
                new_total = total_here - old_need + new_need

                feasible = new_total <= rem_total[p + 1]
                if feasible:
                    for j in range(k):
                        if cond_need[j] > rem[p + 1][j]:
                            feasible = False
                            break
                if feasible:
                    assignment[p] = b
                    recurse(p + 1, new_partial, new_total)
                    assignment[p] = -1

                mem.pop()
                cnt[wp] -= 1
                block_need[b] = old_need
                if old_typed:
                    cond_need[wp] += 1

            if opened:
                members.pop()
                counts.pop()
                block_need.pop()
                for j in range(k):
                    cond_need[j] -= c[j]

    recurse(0, 0.0, 0)
    if state["best_value"] is None:
        raise InfeasibleError("no admissible partition exists")
    return OracleResult(
        matching=Matching.from_labels(state["best_assignment"]),
        value=float(state["best_value"]),
        n_examined=state["examined"],
    )


def baseline_match(
    sample: Sample,
    metric: Metric,
    method: str,
    k_controls: int = 2,
    workers: int = -1,
) -> Matching:
    """Greedy reference matchers for two-condition samples.

    - ``greedy_1to1``: each treated unit, in index order, pairs with its
      nearest not-yet-used control.
    - ``replacement_1to1``: each treated unit pairs with its nearest control;
      controls may be reused, and treated units sharing a control form one
      group. Unused controls stay unassigned.
    - ``greedy_1tok``: as greedy_1to1 but taking ``k_controls`` controls per
      treated unit.
    """
    if method not in BASELINE_METHODS:
        raise ValidationError(f"unknown baseline {method!r}; expected one of {BASELINE_METHODS}")
    if sample.k != 2:
        raise ValidationError(f"baseline matching requires k=2, sample has k={sample.k}")
    treated = sample.treatment_sets[0]
    controls = sample.treatment_sets[1]
    labels = np.full(sample.n, -1, dtype=np.int64)
    index = build_index(sample, controls, metric)

    if method == "replacement_1to1":
        ii, _, _ = knn_batch(index, treated, 1, workers=workers)
        nearest = ii[:, 0]
        shared = np.unique(nearest)
        labels[shared] = np.arange(shared.size)
        labels[treated] = labels[nearest]
        return Matching.from_labels(labels)

    per = 1 if method == "greedy_1to1" else int(k_controls)
    if per < 1:
        raise ValidationError("greedy_1tok needs k_controls >= 1")
    if controls.size < per * treated.size:
        raise InfeasibleError(
            f"{method} needs {per * treated.size} controls, sample has {controls.size}"
        )
    used = np.zeros(sample.n, dtype=bool)
    for gid, unit in enumerate(treated):
        picked = []
        kq = min(4 * per, controls.size)
        while True:
            ii, _, _ = knn_batch(index, [unit], kq, workers=workers)
            for cand in ii[0]:
                if not used[cand]:
                    picked.append(cand)
                    if len(picked) == per:
                        break
            if len(picked) == per or kq == controls.size:
                break
            picked.clear()
            kq = min(4 * kq, controls.size)
        chosen = np.array(picked, dtype=np.int64)
        used[chosen] = True
        labels[unit] = gid
        labels[chosen] = gid
    return Matching.from_labels(labels)
