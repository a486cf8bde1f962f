"""Churn simulation: alternate withdrawals and joins on an initially optimal tree.

Each replication draws ``n`` withdrawal probabilities, builds the Huffman
tree, then performs ``m`` rounds of (withdraw one member, join one new
member) so the group size stays at ``n``.

Random streams: replication ``r`` of a config with seed ``s`` uses
``numpy.random.Generator(PCG64(SeedSequence(s, spawn_key=(r,))))``. The
``i``-th config of a sweep with base seed ``b`` gets the seed
``SeedSequence(b, spawn_key=(i,)).generate_state(1, uint64)[0]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .analysis import CostReport, build_huffman, withdrawal_costs
from .key_tree import Member
from .policies import Policy, select
from .rekey import KeyEpoch

RNG_NAME = "numpy.random.PCG64 (SeedSequence(seed, spawn_key=(replication,)))"
WORKERS_ENV = "LKHTREE_WORKERS"
WITHDRAW_RULES = ("weighted", "uniform")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    m: int
    policy: Policy = Policy.ALG1
    lo: float = 0.1
    hi: float = 0.9
    withdraw_rule: str = "weighted"
    seed: int = 0
    replications: int = 20

    def __post_init__(self):
        try:
            object.__setattr__(self, "policy", Policy.parse(self.policy))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError("n must be ≥ 2")
        if not isinstance(self.m, int) or self.m < 1:
            raise ConfigError("m must be ≥ 1")
        if not (0 < self.lo <= self.hi <= 1):
            raise ConfigError("distribution bounds must satisfy 0 < lo ≤ hi ≤ 1")
        if self.withdraw_rule not in WITHDRAW_RULES:
            raise ConfigError(f"withdraw rule must be one of {WITHDRAW_RULES}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications must be ≥ 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.value
        return d


@dataclass
class ReplicationResult:
    index: int
    avg_join_cost: float        # keys distributed per join: d_X + 2
    avg_withdraw_cost: float    # surviving keys renewed per withdrawal: d_M - 1
    avg_join_refresh: float     # refreshed path keys per join: d_X + 1
    avg_withdraw_depth: float   # departing member depth d_M
    join_visits: int
    final: CostReport

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final"] = self.final.to_dict()
        return d


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


@dataclass
class SimulationReport:
    config: SimulationConfig
    replications: list[ReplicationResult]
    rng: str = RNG_NAME
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("avg_join_cost", "avg_withdraw_cost", "avg_join_refresh",
                    "avg_withdraw_depth"):
            mean, std = _mean_std([getattr(r, key) for r in self.replications])
            self.summary[key] = mean
            self.summary[key + "_std"] = std

    @property
    def avg_join_cost(self) -> float:
        return self.summary["avg_join_cost"]

    @property
    def avg_withdraw_cost(self) -> float:
        return self.summary["avg_withdraw_cost"]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "withdraw_rule": self.config.withdraw_rule,
            "rng": self.rng,
            "summary": dict(self.summary),
            "final": self.replications[0].final.to_dict(),
            "replications": [r.to_dict() for r in self.replications],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    CSV_FIELDS = ("policy", "n", "m", "withdraw_rule", "seed", "replication",
                  "avg_join_cost", "avg_withdraw_cost", "avg_join_refresh",
                  "avg_withdraw_depth", "l", "entropy")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        c = self.config
        head = [c.policy.value, c.n, c.m, c.withdraw_rule, c.seed]
        for r in self.replications:
            w.writerow(head + [r.index, repr(r.avg_join_cost), repr(r.avg_withdraw_cost),
                               repr(r.avg_join_refresh), repr(r.avg_withdraw_depth),
                               repr(r.final.l), repr(r.final.entropy)])
        for stat in ("mean", "std"):
            suffix = "" if stat == "mean" else "_std"
            w.writerow(head + [stat] + [repr(self.summary[k + suffix]) for k in
                                        ("avg_join_cost", "avg_withdraw_cost",
                                         "avg_join_refresh", "avg_withdraw_depth")] + ["", ""])
        return buf.getvalue()


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def run_replication(config: SimulationConfig, index: int,
                    epoch_sink: Optional[list] = None) -> ReplicationResult:
    """One replication. If ``epoch_sink`` is a list, the full key epoch is appended to it."""
    rng = replication_rng(config.seed, index)
    lo, hi = config.lo, config.hi
    probs = rng.uniform(lo, hi, size=config.n)
    tree = build_huffman([Member(i, float(p)) for i, p in enumerate(probs)])
    epoch = KeyEpoch.start(tree) if epoch_sink is not None else None
    weighted = config.withdraw_rule == "weighted"
    roster = [] if weighted else [m.id for m in tree.members()]
    slot = {mid: k for k, mid in enumerate(roster)}
    policy = config.policy
    counter: Counter = Counter()
    next_id = config.n
    join_cost = withdraw_cost = join_refresh = withdraw_depth = 0

    for _ in range(config.m):
        if weighted:
            leaf = tree.locate(rng.random() * tree.total_weight)
            leaving = tree.member_at(leaf).id
        else:
            k = int(rng.integers(len(roster)))
            leaving = roster[k]
            roster[k] = roster[-1]
            slot[roster[k]] = k
            roster.pop()
            del slot[leaving]
        mut = tree.withdraw(leaving)
        withdraw_cost += mut.cost
        withdraw_depth += mut.withdraw_depth
        if epoch is not None:
            epoch.record(tree, mut)

        member = Member(next_id, float(rng.uniform(lo, hi)))
        next_id += 1
        x = select(policy, tree, member.p, counter)
        mut = tree.insert_at(member, x)
        join_cost += mut.cost
        join_refresh += len(mut.refreshed)
        if epoch is not None:
            epoch.record(tree, mut)
        if not weighted:
            slot[member.id] = len(roster)
            roster.append(member.id)

    if epoch_sink is not None:
        epoch_sink.append(epoch)
    m = config.m
    return ReplicationResult(
        index=index, avg_join_cost=join_cost / m, avg_withdraw_cost=withdraw_cost / m,
        avg_join_refresh=join_refresh / m, avg_withdraw_depth=withdraw_depth / m,
        join_visits=counter["visits"], final=withdrawal_costs(tree))


def _run_one(args):
    config, index = args
    return run_replication(config, index)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _map(jobs: list, workers: Optional[int]) -> list[ReplicationResult]:
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(jobs) < 2:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def run(config: SimulationConfig, workers: Optional[int] = None) -> SimulationReport:
    results = _map([(config, r) for r in range(config.replications)], workers)
    results.sort(key=lambda r: r.index)
    return SimulationReport(config=config, replications=results)


def derive_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sweep(configs: Sequence[SimulationConfig], base_seed: Optional[int] = None,
          workers: Optional[int] = None) -> list[SimulationReport]:
    """Run independent configs; with ``base_seed`` each config's seed is re-derived."""
    configs = list(configs)
    if base_seed is not None:
        configs = [replace(c, seed=derive_seed(base_seed, i)) for i, c in enumerate(configs)]
    jobs = [(c, r) for c in configs for r in range(c.replications)]
    results = _map(jobs, workers)
    reports, k = [], 0
    for c in configs:
        chunk = sorted(results[k:k + c.replications], key=lambda r: r.index)
        k += c.replications
        reports.append(SimulationReport(config=c, replications=chunk))
    return reports


TABLE_NS = (100, 10000)
TABLE_MS = (100, 10000)


def table_grid(replications: int = 20, ns=TABLE_NS, ms=TABLE_MS,
               policies: Sequence = tuple(Policy), withdraw_rule: str = "weighted",
               lo: float = 0.1, hi: float = 0.9) -> list[SimulationConfig]:
    """Configs for the join/withdrawal tables, ordered policy-major then (n, m)."""
    return [SimulationConfig(n=n, m=m, policy=p, lo=lo, hi=hi, withdraw_rule=withdraw_rule,
                             replications=replications)
            for p in policies for n in ns for m in ms]


def table_csv(reports: Sequence[SimulationReport], metric: str) -> str:
    """Rows per policy, columns per (n, m) cell, two decimals."""
    cells = sorted({(r.config.n, r.config.m) for r in reports})
    policies = sorted({r.config.policy for r in reports}, key=lambda p: p.value)
    lookup = {(r.config.policy, r.config.n, r.config.m): r for r in reports}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy"] + [f"n={n} m={m}" for n, m in cells])
    for p in policies:
        row = [p.value]
        for n, m in cells:
            r = lookup.get((p, n, m))
            row.append("" if r is None else f"{r.summary[metric]:.2f}")
        w.writerow(row)
    return buf.getvalue()


def sweep_outputs(reports: Sequence[SimulationReport]) -> dict[str, str]:
    """File name -> contents for the artifacts written by a sweep."""
    return {
        "reports.json": json.dumps([r.to_dict() for r in reports], indent=2) + "\n",
        "table_join.csv": table_csv(reports, "avg_join_cost"),
        "table_withdraw.csv": table_csv(reports, "avg_withdraw_cost"),
    }
