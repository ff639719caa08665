"""Command-line front end: match a CSV, re-score an existing matching, or
run the simulation harness.

Exit codes: 0 on success, 2 when the matching problem is infeasible, 3 on
I/O, parsing, or configuration failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np
import pandas as pd

from .core import Constraints, InfeasibleError, MatchOptions, GenmatchError, ValidationError, validate_sample
from .digraph import write_edge_list
from .evaluate import build_report, implied_weights, objective
from .matcher import Matching, check_admissible, match_details
from .metrics import make_metric
from .sim import SimConfig, run_experiment

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_FAILURE = 3


class CliError(Exception):
    """Bad arguments, configuration, or input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 3
        raise CliError(message)


def _resolve_workers(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get("GENMATCH_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise CliError(f"GENMATCH_THREADS must be an integer, got {env!r}") from e
    return -1


def _parse_constraints(text: str) -> Constraints:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError as e:
        raise CliError(f"bad constraint tuple {text!r}: {e}") from e
    return Constraints.from_tuple(values)


def _read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise CliError(f"cannot read {path}: {e}") from e


def _require_columns(df: pd.DataFrame, names, path: str) -> None:
    missing = [c for c in names if c and c not in df.columns]
    if missing:
        raise CliError(f"{path} lacks columns {missing}; has {list(df.columns)}")


def _load_sample(args):
    df = _read_table(args.input)
    cov_cols = [c.strip() for c in args.covariate_cols.split(",") if c.strip()]
    needed = cov_cols + [args.treatment_col]
    if args.outcome_col:
        needed.append(args.outcome_col)
    if args.id_col:
        needed.append(args.id_col)
    _require_columns(df, needed, args.input)
    try:
        X = df[cov_cols].to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise CliError(f"covariate columns are not numeric: {e}") from e
    labels = df[args.treatment_col].astype(str).to_numpy()
    label_order = None
    if args.treated_label is not None:
        if args.treated_label not in labels:
            raise CliError(
                f"treated label {args.treated_label!r} does not occur in {args.treatment_col}"
            )
        rest = [v for v in dict.fromkeys(labels.tolist()) if v != args.treated_label]
        label_order = [args.treated_label] + rest
    sample = validate_sample(X, labels, label_order=label_order)
    ids = (
        df[args.id_col].astype(str).to_numpy()
        if args.id_col
        else np.arange(sample.n).astype(str)
    )
    if np.unique(ids).size != ids.size:
        raise CliError("unit ids are not unique")
    outcomes = None
    if args.outcome_col:
        try:
            outcomes = df[args.outcome_col].to_numpy(dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CliError(f"outcome column is not numeric: {e}") from e
    return sample, ids, outcomes


def _resolve_focus(args, sample, ids) -> Optional[np.ndarray]:
    spec = args.focus
    if spec is None or spec == "all":
        return None
    if spec == "treated":
        return sample.treatment_sets[0]
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            wanted = [line.strip() for line in fh if line.strip()]
    except OSError as e:
        raise CliError(f"cannot read focus file {spec}: {e}") from e
    lookup = {v: i for i, v in enumerate(ids)}
    rows = []
    for v in wanted:
        if v not in lookup:
            raise CliError(f"focus unit {v!r} not found in the input ids")
        rows.append(lookup[v])
    return np.array(sorted(set(rows)), dtype=np.int64)


def _write_matches(path, ids, matching: Matching, weights) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("unit_id,group_id,weight\n")
        for i, uid in enumerate(ids):
            gid = matching.labels[i]
            gtxt = str(gid + 1) if gid >= 0 else ""
            wtxt = repr(float(weights[i])) if weights is not None else ""
            fh.write(f"{uid},{gtxt},{wtxt}\n")


def cmd_match(args) -> int:
    sample, ids, outcomes = _load_sample(args)
    constraints = _parse_constraints(args.constraints)
    if constraints.k != sample.k:
        raise CliError(
            f"constraint tuple has {constraints.k} per-condition entries "
            f"but the data shows {sample.k} conditions"
        )
    metric = make_metric(args.metric)
    options = MatchOptions(
        refined_seeds=args.refined_seeds,
        global_step5=args.global_step5,
        caliper_gc=args.caliper_gc,
        caliper_step5=args.caliper_step5,
        focus_set=_resolve_focus(args, sample, ids),
    )
    workers = _resolve_workers(args.threads)
    matching, digraph, _ = match_details(sample, metric, constraints, options, workers=workers)
    if args.dump_digraph:
        write_edge_list(digraph, args.dump_digraph)
    if matching.n_groups == 0:
        bad = digraph.sources[~digraph.feasible]
        names = ", ".join(ids[u] for u in bad[:20])
        suffix = ", ..." if bad.size > 20 else ""
        print(
            f"infeasible: no group can be formed; {bad.size} units cannot satisfy "
            f"the constraints within the caliper: {names}{suffix}",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE

    weights = implied_weights(matching, sample) if sample.k == 2 else None
    report = build_report(matching, sample, metric, outcomes=outcomes)
    os.makedirs(args.output_dir, exist_ok=True)
    _write_matches(os.path.join(args.output_dir, "matches.csv"), ids, matching, weights)
    with open(os.path.join(args.output_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    dropped = matching.unassigned.size
    print(
        f"matched {sample.n - dropped} of {sample.n} units into "
        f"{matching.n_groups} groups (lmax={report.objectives['lmax']:.6g})"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    sample, ids, outcomes = _load_sample(args)
    matches = _read_table(args.matches)
    _require_columns(matches, ["unit_id", "group_id"], args.matches)
    if len(matches) != sample.n:
        raise CliError(
            f"{args.matches} has {len(matches)} rows but the data has {sample.n}"
        )
    lookup = {v: i for i, v in enumerate(ids)}
    labels = np.full(sample.n, -1, dtype=np.int64)
    file_ids = matches["unit_id"].astype(str).to_numpy()
    gids = matches["group_id"].to_numpy()
    for uid, gid in zip(file_ids, gids):
        if uid not in lookup:
            raise CliError(f"unit id {uid!r} in {args.matches} not found in the input")
        if not (isinstance(gid, float) and np.isnan(gid)):
            labels[lookup[uid]] = int(gid)
    matching = Matching.from_labels(labels)

    if args.constraints:
        constraints = _parse_constraints(args.constraints)
        if constraints.k != sample.k:
            raise CliError(
                f"constraint tuple has {constraints.k} per-condition entries "
                f"but the data shows {sample.k} conditions"
            )
        problems = check_admissible(matching, sample, constraints, require_spanning=False)
        for p in problems:
            print(f"warning: {p}", file=sys.stderr)
        if problems and args.strict:
            print("strict mode: matching violates the constraints", file=sys.stderr)
            return EXIT_INFEASIBLE

    metric = make_metric(args.metric)
    if args.objective:
        value = objective(matching, sample, metric, args.objective)
        print(f"{args.objective}: {value!r}")
    report = build_report(matching, sample, metric, outcomes=outcomes, lenient=True)
    os.makedirs(args.output_dir, exist_ok=True)
    with open(os.path.join(args.output_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    print(
        f"evaluated {matching.n_groups} groups over {sample.n} units "
        f"({matching.unassigned.size} unassigned)"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    settings = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                settings = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(settings, dict):
            raise CliError("config file must hold a JSON object")
    if args.n is not None:
        settings["n"] = args.n
    if args.reps is not None:
        settings["replications"] = args.reps
    if args.seed is not None:
        settings["seed"] = args.seed
    if args.methods is not None:
        settings["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.constraints is not None:
        settings["constraints"] = _parse_constraints(args.constraints).as_tuple()
    if args.metric is not None:
        settings["metric"] = args.metric
    if args.k_controls is not None:
        settings["k_controls"] = args.k_controls
    if args.normalize is not None:
        settings["normalize"] = args.normalize
    settings["workers"] = _resolve_workers(args.threads)
    try:
        config = SimConfig(**settings)
    except TypeError as e:
        raise CliError(f"bad config: {e}") from e

    report = run_experiment(config)
    os.makedirs(args.output_dir, exist_ok=True)
    with open(os.path.join(args.output_dir, "simreport.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(args.output_dir, "simreport.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    print(f"seed: {report.seed}")
    print(
        f"simulated {config.replications} replicates of n={config.n} "
        f"for methods: {', '.join(config.methods)}"
    )
    return EXIT_OK


def _add_data_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--treatment-col", required=True, help="treatment column name")
    p.add_argument("--covariate-cols", required=True, help="comma-separated covariate columns")
    p.add_argument("--outcome-col", default=None, help="outcome column for effect estimation")
    p.add_argument("--id-col", default=None, help="unit id column (default: row number)")
    p.add_argument(
        "--treated-label",
        default=None,
        help="treatment value to map to condition 1 (default: first appearing)",
    )
    p.add_argument("--metric", default="euclidean", choices=["euclidean", "mahalanobis", "scalar"])
    p.add_argument("--output-dir", default=".", help="where result files are written")
    p.add_argument("--seed", type=int, default=None, help="accepted for interface symmetry")
    p.add_argument("--threads", type=int, default=None, help="NN search threads (-1 = all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="genmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("match", help="construct a matching from a CSV file")
    _add_data_arguments(m)
    m.add_argument("--constraints", required=True, help="c_1,...,c_k,t")
    m.add_argument("--caliper-gc", type=float, default=None, help="max digraph arc length")
    m.add_argument("--caliper-step5", type=float, default=None, help="max leftover assignment distance")
    m.add_argument("--refined-seeds", action="store_true")
    m.add_argument("--global-step5", action="store_true")
    m.add_argument("--focus", default=None, help="all, treated, or a file of unit ids")
    m.add_argument("--dump-digraph", default=None, help="write the digraph edge list here")
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("evaluate", help="re-score an existing matches.csv")
    _add_data_arguments(e)
    e.add_argument("--matches", required=True, help="matches.csv produced by the match command")
    e.add_argument("--constraints", default=None, help="audit groups against c_1,...,c_k,t")
    e.add_argument("--strict", action="store_true", help="constraint violations become exit 2")
    e.add_argument(
        "--objective",
        default=None,
        choices=["lmax", "lmax_tc", "lmean", "lmean_tc", "lsum_tc"],
        help="print one objective to stdout",
    )
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="run the simulation harness")
    s.add_argument("--config", default=None, help="JSON file of settings; flags override")
    s.add_argument("--n", type=int, default=None, help="units per replicate")
    s.add_argument("--reps", type=int, default=None, help="number of replicates")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--methods", default=None, help="comma-separated method names")
    s.add_argument("--constraints", default=None, help="c_1,...,c_k,t")
    s.add_argument("--metric", default=None, choices=["euclidean", "mahalanobis", "scalar"])
    s.add_argument("--k-controls", type=int, default=None, help="controls per treated for greedy1k")
    s.add_argument("--normalize", default=None, help="reference method for relative columns")
    s.add_argument("--output-dir", default=".")
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CliError, GenmatchError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
