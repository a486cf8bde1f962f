"""Command-line front end.

Exit codes: 0 ok, 1 runtime error or audit/validation failure, 2 usage or
malformed input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .analysis import BoundInapplicable, CostReport
from .key_tree import KeyTree, KeyTreeError, Member, build_from_members
from .policies import Policy
from .rekey import InconsistentSnapshot, KeyEpoch, MalformedEpoch
from .simulator import (
    ConfigError,
    SimulationConfig,
    run,
    run_replication,
    sweep,
    sweep_outputs,
    table_grid,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _dist(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_json(path: str):
    try:
        with open(path) as fp:
            return json.load(fp)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


# -- commands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    lo, hi = args.dist
    try:
        config = SimulationConfig(n=args.n, m=args.m, policy=args.policy, lo=lo, hi=hi,
                                  withdraw_rule=args.withdraw_rule, seed=args.seed,
                                  replications=args.reps)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    report = run(config, workers=args.workers)
    text = report.to_json() if args.format == "json" else report.to_csv()
    _write(args.out, text)
    if args.epoch_out:
        sink: list = []
        run_replication(config, 0, epoch_sink=sink)
        with open(args.epoch_out, "w") as fp:
            sink[0].write_jsonl(fp)
    return EXIT_OK


def cmd_sweep(args) -> int:
    lo, hi = args.dist
    try:
        configs = table_grid(replications=args.reps, ns=args.n, ms=args.m,
                             policies=[Policy.parse(p) for p in args.policies],
                             withdraw_rule=args.withdraw_rule, lo=lo, hi=hi)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    reports = sweep(configs, base_seed=args.seed, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = sweep_outputs(reports)
    for name, text in files.items():
        (out / name).write_text(text)
    sys.stdout.write("Average join cost\n" + files["table_join.csv"])
    sys.stdout.write("Average withdrawal cost\n" + files["table_withdraw.csv"])
    return EXIT_OK


def cmd_huffman(args) -> int:
    if args.probs:
        try:
            probs = [float(v) for v in args.probs.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --probs: {exc}") from exc
    elif args.random:
        lo, hi = args.dist
        rng = np.random.Generator(np.random.PCG64(args.seed))
        probs = [float(p) for p in rng.uniform(lo, hi, size=args.random)]
    else:
        raise UsageError("give --probs or --random")
    try:
        tree = build_from_members([Member(i, p) for i, p in enumerate(probs)], args.shape)
    except (KeyTreeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    _write(args.out, json.dumps(tree.to_dict(), indent=1) + "\n")
    sys.stderr.write(json.dumps(analysis.withdrawal_costs(tree).to_dict()) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _load_json(args.tree)
    try:
        tree = KeyTree.from_dict(doc)
    except KeyTreeError as exc:
        raise UsageError(f"malformed tree: {exc}") from exc
    problems = tree.validate()
    for v in problems:
        print(v)
    if not problems:
        print(f"ok: {len(tree)} members, {tree.node_count} nodes")
    return EXIT_FAIL if problems else EXIT_OK


def _report_from_file(path: str) -> CostReport:
    doc = _load_json(path)
    if isinstance(doc, dict) and "final" in doc:
        doc = doc["final"]
    try:
        return CostReport.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path} is not a cost report: {exc}") from exc


def _bounds_lines(n, p_g, p_max, p_min, h) -> list[tuple[str, object]]:
    lines: list[tuple[str, object]] = []

    def attempt(name, fn, needs):
        missing = [k for k, v in needs.items() if v is None]
        if missing:
            lines.append((name, "inapplicable: needs " + ", ".join(missing)))
            return
        try:
            lines.append((name, fn()))
        except BoundInapplicable as exc:
            lines.append((name, f"inapplicable: {exc}"))

    attempt("entropy_lower", lambda: analysis.entropy_bounds(n, p_max, p_min)[0], {"n": n})
    attempt("entropy_upper", lambda: analysis.entropy_bounds(n, p_max, p_min)[1], {"n": n})
    report = None
    if None not in (n, p_g, h):
        report = CostReport(n=n, P_G=p_g, P_max=p_max, P_min=p_min, L=math.nan, l=math.nan,
                            entropy=h)
    attempt("selcuk_l_bound", lambda: analysis.K1 * h + analysis.K2, {"entropy": h})
    attempt("thm3_depth_bound", lambda: analysis.thm3_depth_bound(p_min, p_g, p_max),
            {"pg": p_g})
    attempt("thm4_l_bound", lambda: analysis.thm4_l_bound(report),
            {"n": n, "pg": p_g, "entropy": h})
    attempt("thm5_l_bound", lambda: analysis.thm5_l_bound(report),
            {"n": n, "pg": p_g, "entropy": h})
    if p_g is not None:
        lines.append(("thm3_hypothesis", analysis.thm3_hypothesis(p_g)))
        lines.append(("thm5_hypothesis", analysis.thm5_hypothesis(p_g, p_max)))
    return lines


def cmd_bounds(args) -> int:
    if args.report:
        r = _report_from_file(args.report)
        n, p_g, p_max, p_min, h = r.n, r.P_G, r.P_max, r.P_min, r.entropy
    else:
        if args.pmax is None or args.pmin is None:
            raise UsageError("give --report or at least --pmax and --pmin")
        n, p_g, p_max, p_min, h = args.n, args.pg, args.pmax, args.pmin, args.entropy
    if not (0 < p_min <= p_max <= 1):
        raise UsageError("need 0 < pmin <= pmax <= 1")
    if n is not None and n < 1:
        raise UsageError("n must be >= 1")
    if p_g is not None:
        if p_g <= 0:
            raise UsageError("P_G must be positive")
        if n is not None and not (n * p_min * (1 - 1e-12) <= p_g <= n * p_max * (1 + 1e-12)):
            raise UsageError(f"P_G = {p_g} outside [n*pmin, n*pmax] = "
                             f"[{n * p_min}, {n * p_max}]")
    if h is not None and n is not None and not (0 <= h <= math.log2(n) + 1e-9):
        raise UsageError("entropy must lie in [0, log2 n]")
    for name, value in _bounds_lines(n, p_g, p_max, p_min, h):
        print(f"{name}\t{value!r}" if isinstance(value, float) else f"{name}\t{value}")
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        with open(args.epoch) as fp:
            epoch = KeyEpoch.read_jsonl(fp)
    except OSError as exc:
        raise UsageError(f"cannot read {args.epoch}: {exc}") from exc
    except MalformedEpoch as exc:
        raise UsageError(f"malformed epoch: {exc}") from exc
    except InconsistentSnapshot as exc:
        print(f"inconsistent history: {exc}")
        return EXIT_FAIL
    problems = epoch.audit()
    for p in problems:
        print(p)
    if not problems:
        print(f"ok: {len(epoch.entries)} mutations audited")
    return EXIT_FAIL if problems else EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lkhtree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    policies = [p.value for p in Policy]

    def add_workers(p):
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $LKHTREE_WORKERS or 1)")

    p = sub.add_parser("simulate", help="run the churn simulation for one configuration")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--policy", choices=policies, default="alg1")
    p.add_argument("--dist", type=_dist, default=(0.1, 0.9), metavar="LO:HI")
    p.add_argument("--withdraw-rule", choices=["weighted", "uniform"], default="weighted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--epoch-out", default=None,
                   help="also write replication 0's key epoch as JSON lines")
    add_workers(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run the join/withdrawal table grid")
    p.add_argument("--n", type=int, nargs="+", default=[100, 10000])
    p.add_argument("--m", type=int, nargs="+", default=[100, 10000])
    p.add_argument("--policies", nargs="+", choices=policies, default=policies)
    p.add_argument("--dist", type=_dist, default=(0.1, 0.9), metavar="LO:HI")
    p.add_argument("--withdraw-rule", choices=["weighted", "uniform"], default="weighted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--out-dir", required=True)
    add_workers(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("huffman", help="build an initial tree and write it as JSON")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--probs", help="comma-separated withdrawal probabilities")
    g.add_argument("--random", type=int, metavar="N", help="draw N probabilities")
    p.add_argument("--dist", type=_dist, default=(0.1, 0.9), metavar="LO:HI")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=["huffman", "balanced"], default="huffman")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_huffman)

    p = sub.add_parser("bounds", help="evaluate the closed-form bounds")
    p.add_argument("--report", help="cost report or simulation report JSON")
    p.add_argument("--n", type=int)
    p.add_argument("--pmax", type=float)
    p.add_argument("--pmin", type=float)
    p.add_argument("--pg", type=float, help="P_G, the sum of withdrawal probabilities")
    p.add_argument("--entropy", type=float)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("audit", help="check forward/backward security of a key epoch")
    p.add_argument("--epoch", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("validate", help="check the invariants of a serialized tree")
    p.add_argument("--tree", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lkhtree {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); not our failure
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        print(f"lkhtree {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
