import io
import json
import random

import pytest

from conftest import grow, two_leaf
from lkhtree.key_tree import KeyTree, Member, build_from_members
from lkhtree.policies import Policy, select
from lkhtree.rekey import (
    InconsistentSnapshot,
    KeyEpoch,
    MalformedEpoch,
    check_backward_security,
    check_forward_security,
    record,
)
from lkhtree.simulator import SimulationConfig, run_replication


def history(policy, seed, n=20, steps=60):
    """Random churn with every mutation recorded."""
    rng = random.Random(seed)
    tree = build_from_members([Member(i, rng.uniform(0.1, 0.9)) for i in range(n)])
    epoch = KeyEpoch.start(tree)
    nid = 10**6
    for _ in range(steps):
        if len(tree) > 1 and rng.random() < 0.5:
            mid = rng.choice([m.id for m in tree.members()])
            epoch.record(tree, tree.withdraw(mid))
        else:
            p = rng.uniform(0.1, 0.9)
            epoch.record(tree, tree.insert_at(Member(nid, p), select(policy, tree, p)))
            nid += 1
    return tree, epoch


def test_join_entry():
    tree = two_leaf()
    epoch = KeyEpoch.start(tree)
    b = tree.leaf_of("B")
    mut = tree.insert_at(Member("M", 0.3), b)
    record(epoch, tree, mut)
    e = epoch.entries[0]
    assert e.kind == "join" and e.step == 1 and e.depth == 1
    assert e.cost == 3
    # root refreshed to version 1, the new internal node and leaf start at 0
    assert e.changes[tree.root] == 1
    assert set(e.held) == set(tree.path(tree.leaf_of("M")))
    assert check_backward_security(epoch, "M")


def test_withdraw_entry():
    tree = two_leaf()
    tree.insert_at(Member("M", 0.3), tree.leaf_of("B"))
    epoch = KeyEpoch.start(tree)
    path = tree.path(tree.leaf_of("M"))
    mut = tree.withdraw("M")
    epoch.record(tree, mut)
    e = epoch.entries[0]
    assert e.kind == "withdraw" and e.depth == 2 and e.cost == 1
    assert sorted(e.held) == sorted(path)
    assert sorted(e.removed) == sorted(path[1:])
    assert check_forward_security(epoch, "M")


def test_record_requires_started_epoch():
    tree = two_leaf()
    mut = tree.withdraw("A")
    with pytest.raises(ValueError):
        record(None, tree, mut)


def test_checks_need_the_event():
    tree = two_leaf()
    epoch = KeyEpoch.start(tree)
    with pytest.raises(KeyError):
        epoch.check_forward_security("A")
    with pytest.raises(KeyError):
        epoch.check_backward_security("A")


def test_last_member_leaving_is_vacuously_secure():
    tree = KeyTree.single(Member("solo", 0.4))
    epoch = KeyEpoch.start(tree)
    epoch.record(tree, tree.withdraw("solo"))
    assert epoch.entries[0].cost == 0
    assert check_forward_security(epoch, "solo")


def test_rejoin_checks_every_visit():
    tree = two_leaf()
    epoch = KeyEpoch.start(tree)
    for _ in range(3):
        epoch.record(tree, tree.insert_at(Member("R", 0.2), select("alg1", tree, 0.2)))
        epoch.record(tree, tree.withdraw("R"))
    assert check_forward_security(epoch, "R") and check_backward_security(epoch, "R")
    assert epoch.audit() == []


@pytest.mark.parametrize("policy", list(Policy))
def test_fuzzed_histories_are_secure(policy):
    for seed in range(40):
        tree, epoch = history(policy, seed)
        assert epoch.audit() == []
        assert tree.validate() == []


def test_record_detects_stale_version():
    tree = grow(10, "alg1", seed=2)
    epoch = KeyEpoch.start(tree)
    mut = tree.insert_at(Member("x", 0.5), tree.leaf_of(3))
    tree._version[mut.refreshed[0]] += 1
    with pytest.raises(InconsistentSnapshot):
        epoch.record(tree, mut)


def _omit_refresh(tree, mut, victim):
    assert victim not in mut.created
    mut.refreshed.remove(victim)
    tree._version[victim] -= 1


def test_omitted_join_refresh_breaks_backward_security():
    tree = grow(30, "alg2", seed=3)
    epoch = KeyEpoch.start(tree)
    mut = tree.insert_at(Member("x", 0.5), select("alg2", tree, 0.5))
    assert mut.refreshed, "need at least one existing ancestor"
    _omit_refresh(tree, mut, mut.refreshed[0])
    epoch.record(tree, mut)
    assert not check_backward_security(epoch, "x")
    assert epoch.audit() == ["backward security violated for member 'x'"]


def test_omitted_withdraw_refresh_breaks_forward_security():
    tree = grow(30, "alg1", seed=4)
    deep = max(tree.leaves(), key=tree.depth)
    mid = tree.member_at(deep).id
    epoch = KeyEpoch.start(tree)
    mut = tree.withdraw(mid)
    _omit_refresh(tree, mut, mut.refreshed[-1])
    epoch.record(tree, mut)
    assert not check_forward_security(epoch, mid)
    assert len(epoch.audit()) == 1


def test_every_single_omission_is_caught():
    rng = random.Random(11)
    for trial in range(50):
        tree = grow(25, rng.choice(list(Policy)), seed=trial)
        epoch = KeyEpoch.start(tree)
        if rng.random() < 0.5:
            p = rng.uniform(0.1, 0.9)
            mut = tree.insert_at(Member("x", p), select("alg1", tree, p))
        else:
            mid = max(tree.members(), key=lambda m: tree.depth(tree.leaf_of(m.id))).id
            mut = tree.withdraw(mid)
        existing = [x for x in mut.refreshed if x not in mut.created]
        if not existing:
            continue
        _omit_refresh(tree, mut, rng.choice(existing))
        epoch.record(tree, mut)
        assert epoch.audit(), trial


def _dump(epoch):
    buf = io.StringIO()
    epoch.write_jsonl(buf)
    return buf.getvalue()


def test_jsonl_round_trip():
    _, epoch = history("alg3", seed=5)
    text = _dump(epoch)
    back = KeyEpoch.read_jsonl(text.splitlines())
    assert _dump(back) == text
    assert back.costs("join") == epoch.costs("join")
    assert back.audit() == []


def test_jsonl_edit_is_detected():
    _, epoch = history("alg1", seed=6)
    lines = _dump(epoch).splitlines()
    k = next(i for i, line in enumerate(lines) if json.loads(line)["type"] == "join"
             and len(json.loads(line)["changes"]) > 2)
    doc = json.loads(lines[k])
    dropped = next(x for x, v in doc["changes"] if v > 0)
    doc["changes"] = [c for c in doc["changes"] if c[0] != dropped]
    lines[k] = json.dumps(doc)
    with pytest.raises(InconsistentSnapshot):
        KeyEpoch.read_jsonl(lines)


def _untouched_later(docs, k, x):
    return all(x not in [y for y, _ in d.get("changes", [])] + [y for y, _ in d.get("held", [])]
               + d.get("removed", []) for d in docs[k + 1:])


def _existed_before(docs, k, x):
    return any(x in [y for y, _ in d.get("versions", []) + d.get("changes", [])]
               for d in docs[:k])


def test_jsonl_consistent_forgery_fails_audit():
    # rewrite both the change set and the held version of a key nobody touches
    # afterwards: the replay is self-consistent, the audit still fails
    _, epoch = history("alg1", seed=6, steps=120)
    lines = _dump(epoch).splitlines()
    docs = [json.loads(line) for line in lines]
    k, x = next((k, x) for k, d in enumerate(docs) if d["type"] == "join"
                for x, v in d["changes"] if _existed_before(docs, k, x)
                and _untouched_later(docs, k, x))
    doc = docs[k]
    doc["changes"] = [c for c in doc["changes"] if c[0] != x]
    doc["held"] = [[y, w - 1 if y == x else w] for y, w in doc["held"]]
    lines[k] = json.dumps(doc)
    assert KeyEpoch.read_jsonl(lines).audit() == [
        f"backward security violated for member {doc['member_id']!r}"]


@pytest.mark.parametrize("mangle", [
    lambda ls: ls[:-1],                       # truncated: no end marker
    lambda ls: ls[1:],                        # no genesis
    lambda ls: ls[:2] + ["{not json"] + ls[2:],
    lambda ls: [ls[0], ls[2], ls[1]] + ls[3:],  # steps out of order
    lambda ls: ls + ['{"type": "join"}'],     # content after end
    lambda ls: ls[:-1] + ['{"type": "end", "entries": 1}'],
])
def test_jsonl_malformed(mangle):
    _, epoch = history("alg2", seed=7, steps=10)
    with pytest.raises(MalformedEpoch):
        KeyEpoch.read_jsonl(mangle(_dump(epoch).splitlines()))


@pytest.mark.parametrize("rule", ["weighted", "uniform"])
def test_epoch_costs_match_simulator_averages(rule):
    cfg = SimulationConfig(n=50, m=200, policy="alg3", withdraw_rule=rule, seed=9,
                           replications=1)
    sink = []
    res = run_replication(cfg, 0, epoch_sink=sink)
    epoch = sink[0]
    assert sum(epoch.costs("join")) / cfg.m == res.avg_join_cost
    assert sum(epoch.costs("withdraw")) / cfg.m == res.avg_withdraw_cost
    assert epoch.audit() == []
    assert run_replication(cfg, 0) == res
