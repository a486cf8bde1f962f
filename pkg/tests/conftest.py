import math
import random
import sys

import pytest

from lkhtree.analysis import withdrawal_costs
from lkhtree.key_tree import KeyTree, Member, build_from_members
from lkhtree.policies import Policy, select


def grow(n, policy, seed, lo=0.1, hi=0.9):
    """Tree built purely by policy insertions, starting from a single member."""
    rng = random.Random(seed)
    tree = KeyTree.single(Member(0, rng.uniform(lo, hi)))
    for i in range(1, n):
        p = rng.uniform(lo, hi)
        tree.insert_at(Member(i, p), select(policy, tree, p))
    return tree


def churn(tree, steps, policy, seed, lo=0.1, hi=0.9, start_id=10**6):
    """Random mix of joins and withdrawals; keeps at least one member."""
    rng = random.Random(seed)
    nid = start_id
    muts = []
    for _ in range(steps):
        if len(tree) > 1 and rng.random() < 0.5:
            mid = rng.choice([m.id for m in tree.members()])
            muts.append(tree.withdraw(mid))
        else:
            p = rng.uniform(lo, hi)
            muts.append(tree.insert_at(Member(nid, p), select(policy, tree, p)))
            nid += 1
    return muts


def random_tree(rng):
    """Mixed bag of trees: grown, churned, and dyadic-weight shapes with many ties."""
    n = rng.randint(1, 200)
    kind = rng.random()
    if kind < 0.3:
        tree = grow(n, rng.choice(list(Policy)), rng.randrange(10**9))
    elif kind < 0.6:
        probs = [rng.uniform(0.05, 1.0) for _ in range(n)]
        tree = build_from_members([Member(i, p) for i, p in enumerate(probs)])
        churn(tree, rng.randint(0, 30), rng.choice(list(Policy)), rng.randrange(10**9))
    else:
        # dyadic weights make exact cost ties common
        probs = [rng.choice([0.125, 0.25, 0.5, 1.0]) for _ in range(n)]
        tree = build_from_members([Member(i, p) for i, p in enumerate(probs)],
                                  rng.choice(["huffman", "balanced"]))
    return tree


def assert_source_coding(tree):
    r = withdrawal_costs(tree)
    assert r.l >= r.entropy - 1e-9, (r.l, r.entropy)
    return r


@pytest.fixture
def four():
    return [Member("A", 0.4), Member("B", 0.3), Member("C", 0.2), Member("D", 0.1)]


def two_leaf(pa=0.5, pb=0.4):
    tree = KeyTree()
    a = tree.make_leaf(Member("A", pa))
    b = tree.make_leaf(Member("B", pb))
    tree.set_root(tree.make_internal(a, b))
    return tree


def isclose(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.RESULTS, key=lambda s: s.split(":")[0][-2:]):
        terminalreporter.write_line(line)
