"""Insertion-point selection for a joining member.

Algorithms 1 and 3 walk down from the root towards the lighter subtree;
Algorithms 2 and 4 scan every node for the smallest cost increase. None of
these mutate the tree: feed the chosen node to ``KeyTree.insert_at``.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .key_tree import NIL, EmptyTree, KeyTree, NodeId


class Policy(str, enum.Enum):
    ALG1 = "alg1"
    ALG2 = "alg2"
    ALG3 = "alg3"
    ALG4 = "alg4"

    @classmethod
    def parse(cls, value) -> "Policy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown policy {value!r}; expected one of "
                             + ", ".join(p.value for p in cls)) from None


@dataclass(frozen=True)
class CostIncrease:
    node: NodeId
    value: float


def _require_nonempty(tree: KeyTree) -> None:
    if tree.root is None:
        raise EmptyTree("cannot choose an insertion point in an empty tree")


def _descend(tree: KeyTree, threshold: float, counter: Optional[Counter]) -> NodeId:
    _require_nonempty(tree)
    left, right, w = tree._left, tree._right, tree._weight
    x = tree.root
    visits = 1
    while left[x] != NIL:
        wl, wr = w[left[x]], w[right[x]]
        if threshold >= wl and threshold >= wr:
            break
        x = right[x] if wl >= wr else left[x]
        visits += 1
    if counter is not None:
        counter["visits"] += visits
    return x


def select_alg1(tree: KeyTree, p_new: float, counter: Optional[Counter] = None) -> NodeId:
    """Descend to the lighter child until ``p_new`` outweighs both children."""
    return _descend(tree, p_new, counter)


def select_alg3(tree: KeyTree, p_new: float, counter: Optional[Counter] = None) -> NodeId:
    """Algorithm 1 with the stop test ``p_new + 1 >= both children``."""
    return _descend(tree, p_new + 1.0, counter)


def cost_increase(tree: KeyTree, x: NodeId, p_new: float) -> CostIncrease:
    """Growth of L when inserting at ``x``: ``(d_X + 1) p_new + P_X``."""
    return CostIncrease(x, (tree.depth(x) + 1) * p_new + tree.weight(x))


def starred_cost_increase(tree: KeyTree, x: NodeId, p_new: float) -> CostIncrease:
    """Cost increase including the sure join rekey: ``(d_X + 1)(p_new + 1) + P_X``."""
    return cost_increase(tree, x, p_new + 1.0)


def _argmin(tree: KeyTree, q: float, counter: Optional[Counter]) -> NodeId:
    _require_nonempty(tree)
    w = tree.weight_view()
    d = tree.depth_view()
    cost = (d + 1) * q + w
    best = cost.min()
    ties = np.flatnonzero(cost == best)
    del w, d
    if counter is not None:
        counter["visits"] += tree.node_count
    if len(ties) == 1:
        return int(ties[0])
    return min((int(x) for x in ties),
               key=lambda x: (tree._depth[x], tree.preorder_key(x)))


def select_alg2(tree: KeyTree, p_new: float, counter: Optional[Counter] = None) -> NodeId:
    """Node minimising ``(d_X + 1) p_new + P_X``; ties go to the shallowest,
    then leftmost-in-preorder node."""
    return _argmin(tree, p_new, counter)


def select_alg4(tree: KeyTree, p_new: float, counter: Optional[Counter] = None) -> NodeId:
    return _argmin(tree, p_new + 1.0, counter)


def brute_force_best(tree: KeyTree, p_new: float, starred: bool = False) -> NodeId:
    """Reference argmin over a flat enumeration of the tree.

    Depths and weights are recomputed from the structure and the member
    probabilities instead of being read from the tree's caches.
    """
    _require_nonempty(tree)
    q = p_new + 1.0 if starred else p_new
    rows = []  # (node, depth, preorder index)
    stack = [(tree.root, 0)]
    while stack:
        x, d = stack.pop()
        rows.append((x, d, len(rows)))
        kids = tree.children(x)
        if kids is not None:
            stack.append((kids[1], d + 1))
            stack.append((kids[0], d + 1))
    weight: dict[int, float] = {}
    for x, _, _ in reversed(rows):
        kids = tree.children(x)
        weight[x] = tree.member_at(x).p if kids is None else weight[kids[0]] + weight[kids[1]]
    best = min(rows, key=lambda r: ((r[1] + 1) * q + weight[r[0]], r[1], r[2]))
    return best[0]


_SELECTORS = {
    Policy.ALG1: select_alg1,
    Policy.ALG2: select_alg2,
    Policy.ALG3: select_alg3,
    Policy.ALG4: select_alg4,
}


def select(policy, tree: KeyTree, p_new: float, counter: Optional[Counter] = None) -> NodeId:
    return _SELECTORS[Policy.parse(policy)](tree, p_new, counter)
