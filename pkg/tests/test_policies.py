import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from conftest import grow, isclose, random_tree, two_leaf
from lkhtree.key_tree import EmptyTree, KeyTree, Member, build_from_members
from lkhtree.policies import (
    Policy,
    brute_force_best,
    cost_increase,
    select,
    select_alg1,
    select_alg2,
    select_alg3,
    select_alg4,
    starred_cost_increase,
)


def tree_over(left_w, right_w):
    """Root whose two children are leaves of the given weights."""
    return two_leaf(left_w, right_w)


def heavy_tree(left_w, right_w):
    """Root over two internal children of the given (possibly > 1) weights."""
    tree = KeyTree()

    def side(tag, total):
        k = max(2, int(total / 0.5 + 0.999))
        leaves = [tree.make_leaf(Member(f"{tag}{i}", total / k)) for i in range(k)]
        while len(leaves) > 1:
            leaves = [tree.make_internal(leaves[i], leaves[i + 1]) if i + 1 < len(leaves)
                      else leaves[i] for i in range(0, len(leaves), 2)]
        return leaves[0]

    tree.set_root(tree.make_internal(side("L", left_w), side("R", right_w)))
    return tree


def test_alg1_stops_at_root():
    tree = tree_over(0.5, 0.4)
    assert select_alg1(tree, 0.6) == tree.root


def test_alg1_descends_to_lighter_leaf():
    tree = tree_over(0.5, 0.4)
    assert select_alg1(tree, 0.3) == tree.leaf_of("B")


def test_alg1_tie_goes_right():
    tree = tree_over(0.5, 0.5)
    assert select_alg1(tree, 0.1) == tree.leaf_of("B")


@pytest.mark.parametrize("fn", [select_alg1, select_alg2, select_alg3, select_alg4])
def test_single_leaf_returns_root(fn):
    tree = KeyTree.single(Member("A", 0.3))
    assert fn(tree, 0.9) == tree.root


@pytest.mark.parametrize("fn", [select_alg1, select_alg2, select_alg3, select_alg4])
def test_empty_tree_rejected(fn):
    with pytest.raises(EmptyTree):
        fn(KeyTree(), 0.5)


def test_alg3_stops_at_root():
    tree = heavy_tree(1.2, 0.9)
    assert select_alg3(tree, 0.3) == tree.root


def test_alg3_descends_right():
    tree = heavy_tree(5.0, 3.0)
    right = tree.children(tree.root)[1]
    x = select_alg3(tree, 0.5)
    assert x != tree.root
    assert x in [right] + [y for y in tree.nodes() if right in tree.path(y)]


def test_cost_increase_values():
    tree = heavy_tree(1.0, 1.0)
    assert isclose(cost_increase(tree, tree.root, 0.5).value, 2.5)
    four = build_from_members([Member("A", 0.4), Member("B", 0.3), Member("C", 0.2),
                               Member("D", 0.1)])
    c = four.leaf_of("C")
    assert four.depth(c) == 3
    assert isclose(cost_increase(four, c, 0.1).value, 0.6)
    assert cost_increase(four, c, 0.0).value == 0.2
    assert isclose(starred_cost_increase(four, c, 0.1).value, 4 * 1.1 + 0.2)


def test_cost_increase_depth_three():
    tree = build_from_members([Member("A", 0.4), Member("B", 0.3), Member("C", 0.2),
                               Member("D", 0.1)])
    d = tree.leaf_of("D")
    assert tree.depth(d) == 3
    assert isclose(cost_increase(tree, d, 0.1).value, 0.5)


def test_alg2_two_leaf_enumeration():
    tree = tree_over(0.5, 0.4)
    costs = {x: cost_increase(tree, x, 0.05).value for x in tree.nodes()}
    assert isclose(costs[tree.root], 0.95)
    assert isclose(costs[tree.leaf_of("A")], 0.6)
    assert isclose(costs[tree.leaf_of("B")], 0.5)
    assert select_alg2(tree, 0.05) == tree.leaf_of("B")


def test_alg2_alg4_match_brute_force():
    rng = random.Random(20240611)
    ties = 0
    for _ in range(300):
        tree = random_tree(rng)
        p = rng.choice([rng.uniform(0.01, 1.0), 0.25, 0.5, 0.125])
        a2, a4 = select_alg2(tree, p), select_alg4(tree, p)
        assert a2 == brute_force_best(tree, p)
        assert a4 == brute_force_best(tree, p, starred=True)
        c = [cost_increase(tree, x, p).value for x in tree.nodes()]
        ties += c.count(min(c)) > 1
    assert ties > 10


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**9), p=st.floats(0.0, 1.0))
def test_alg4_is_alg2_with_shifted_probability(seed, p):
    tree = random_tree(random.Random(seed))
    assert select_alg4(tree, p) == select_alg2(tree, p + 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**9), p=st.floats(0.01, 1.0))
def test_scan_policies_never_worse_than_descent(seed, p):
    tree = random_tree(random.Random(seed))
    c2 = cost_increase(tree, select_alg2(tree, p), p).value
    c1 = cost_increase(tree, select_alg1(tree, p), p).value
    assert c2 <= c1
    s4 = starred_cost_increase(tree, select_alg4(tree, p), p).value
    s3 = starred_cost_increase(tree, select_alg3(tree, p), p).value
    assert s4 <= s3
    for x in tree.nodes():
        assert cost_increase(tree, x, p).value >= tree.weight(x)


def test_visit_counters():
    tree = grow(500, "alg1", seed=9)
    for fn in (select_alg1, select_alg3):
        c = Counter()
        x = fn(tree, 0.4, c)
        assert c["visits"] == tree.depth(x) + 1 <= tree.height() + 1
    for fn in (select_alg2, select_alg4):
        c = Counter()
        fn(tree, 0.4, c)
        assert c["visits"] == tree.node_count


def test_policies_do_not_mutate():
    tree = grow(60, "alg2", seed=4)
    before = tree.to_dict()
    for policy in Policy:
        select(policy, tree, 0.7)
    assert tree.to_dict() == before


def _sibling_gaps(tree, nodes):
    for x in nodes:
        s = tree.sibling(x)
        if s is not None:
            yield abs(tree.weight(x) - tree.weight(s))


@pytest.mark.parametrize("policy,extra", [("alg1", 0.0), ("alg3", 2.0)])
def test_sibling_weight_bound_small(policy, extra):
    for seed in range(10):
        tree = grow(300, policy, seed)
        bound = tree.max_member_prob() + extra + 1e-9
        assert max(_sibling_gaps(tree, tree.nodes())) <= bound


def test_ancestor_weight_inequalities_alg1():
    for seed in range(5):
        tree = grow(400, "alg1", seed)
        p_max = tree.max_member_prob()
        p_g = tree.total_weight
        for x in tree.nodes():
            par = tree.parent(x)
            if par is not None:
                assert tree.weight(par) >= 2 * tree.weight(x) - p_max - 1e-9
            d = tree.depth(x)
            assert p_g >= 2 ** d * (tree.weight(x) - p_max) + p_max - 1e-9


def test_policy_parse():
    assert Policy.parse("ALG3") is Policy.ALG3
    with pytest.raises(ValueError):
        Policy.parse("alg5")
