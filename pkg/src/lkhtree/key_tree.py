"""Weighted LKH key tree.

Each member is a leaf, each internal node stands for a subgroup key and the
root for the group key. Nodes live in flat slot arrays and are addressed by
integer handles; a slot is never reused, so a handle of a removed node stays
invalid forever.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Optional

import numpy as np

NIL = -1
WEIGHT_TOL = 1e-9

NodeId = int


class KeyTreeError(Exception):
    """Base class for key tree errors."""


class InvalidProbability(KeyTreeError, ValueError):
    pass


class DuplicateMember(KeyTreeError, ValueError):
    pass


class UnknownMember(KeyTreeError, KeyError):
    pass


class InvalidNode(KeyTreeError, KeyError):
    pass


class EmptyTree(KeyTreeError, ValueError):
    pass


class MalformedTree(KeyTreeError, ValueError):
    """A serialized tree could not be decoded."""


@dataclass(frozen=True)
class Member:
    id: Hashable
    p: float

    def __post_init__(self):
        p = self.p
        if not isinstance(p, (int, float)) or not (0.0 < p <= 1.0):
            raise InvalidProbability(
                f"withdrawal probability of {self.id!r} must lie in (0, 1], got {p!r}")


@dataclass
class TreeMutation:
    """What a join or a withdrawal did to the tree.

    ``refreshed`` lists the surviving nodes whose key version was bumped,
    ordered from the root down. ``path`` is the member's key path (root to
    leaf) after a join, or before a withdrawal.
    """

    kind: str
    member: Member
    created: list[NodeId] = field(default_factory=list)
    removed: list[NodeId] = field(default_factory=list)
    refreshed: list[NodeId] = field(default_factory=list)
    path: list[NodeId] = field(default_factory=list)
    join_depth: Optional[int] = None
    withdraw_depth: Optional[int] = None

    @property
    def cost(self) -> int:
        """Number of fresh keys distributed by this event.

        A join hands the newcomer every key on its path (the refreshed path
        plus its own private key); a withdrawal renews the departed member's
        ancestors that survive the collapse.
        """
        return len(set(self.refreshed).union(self.created))


@dataclass(frozen=True)
class Violation:
    node: Optional[NodeId]
    invariant: str
    detail: str

    def __str__(self):
        where = "tree" if self.node is None else f"node {self.node}"
        return f"{where}: {self.invariant}: {self.detail}"


class KeyTree:
    """Strictly binary, weight-annotated key tree.

    Cached node weights are maintained along the mutation path by summing
    the two children, and cached depths are shifted for the subtree that
    moves. ``validate`` recomputes both from scratch.
    """

    def __init__(self):
        self.root: Optional[NodeId] = None
        self._parent: list[int] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._member: list[Optional[Member]] = []
        self._version: list[int] = []
        self._alive: list[bool] = []
        # dead slots carry +inf weight so vectorised scans skip them
        self._weight = array("d")
        self._depth = array("q")
        self._leaf: dict[Hashable, NodeId] = {}
        self._live = 0

    # -- construction primitives -------------------------------------------

    def _new_slot(self, parent: int, member: Optional[Member], weight: float,
                  depth: int, version: int = 0) -> NodeId:
        slot = len(self._parent)
        self._parent.append(parent)
        self._left.append(NIL)
        self._right.append(NIL)
        self._member.append(member)
        self._version.append(version)
        self._alive.append(True)
        self._weight.append(weight)
        self._depth.append(depth)
        self._live += 1
        return slot

    def make_leaf(self, member: Member) -> NodeId:
        """Create a detached leaf for ``member``; link it with ``make_internal``."""
        if member.id in self._leaf:
            raise DuplicateMember(f"member {member.id!r} already in tree")
        x = self._new_slot(NIL, member, float(member.p), 0)
        self._leaf[member.id] = x
        return x

    def make_internal(self, left: NodeId, right: NodeId) -> NodeId:
        """Create a detached internal node over two detached subtrees."""
        for c in (left, right):
            self._check(c)
            if self._parent[c] != NIL:
                raise InvalidNode(f"node {c} is already attached")
        x = self._new_slot(NIL, None, self._weight[left] + self._weight[right], 0)
        self._left[x] = left
        self._right[x] = right
        self._parent[left] = x
        self._parent[right] = x
        return x

    def set_root(self, x: NodeId) -> None:
        """Install a detached subtree as the whole tree and fix its depths."""
        self._check(x)
        if self.root is not None:
            raise KeyTreeError("tree already has a root")
        self.root = x
        self._depth[x] = 0
        stack = [x]
        depth, left, right = self._depth, self._left, self._right
        while stack:
            v = stack.pop()
            if left[v] != NIL:
                d = depth[v] + 1
                depth[left[v]] = d
                depth[right[v]] = d
                stack.append(left[v])
                stack.append(right[v])
        if self._live != sum(1 for _ in self.nodes()):
            raise KeyTreeError("detached nodes left outside the root subtree")

    @classmethod
    def single(cls, member: Member) -> "KeyTree":
        tree = cls()
        tree.set_root(tree.make_leaf(member))
        return tree

    # -- queries -------------------------------------------------------------

    def _check(self, x) -> None:
        if not isinstance(x, (int, np.integer)) or not 0 <= x < len(self._alive) \
                or not self._alive[x]:
            raise InvalidNode(f"invalid or removed node handle {x!r}")

    def __len__(self) -> int:
        return len(self._leaf)

    def __contains__(self, member_id) -> bool:
        return member_id in self._leaf

    @property
    def node_count(self) -> int:
        return self._live

    @property
    def capacity(self) -> int:
        """Number of slots ever allocated (live or dead)."""
        return len(self._alive)

    @property
    def total_weight(self) -> float:
        """P_G, the root weight (0.0 for an empty tree)."""
        return 0.0 if self.root is None else self._weight[self.root]

    def is_alive(self, x: NodeId) -> bool:
        return 0 <= x < len(self._alive) and self._alive[x]

    def weight(self, x: NodeId) -> float:
        self._check(x)
        return self._weight[x]

    def depth(self, x: NodeId) -> int:
        self._check(x)
        return self._depth[x]

    def key_version(self, x: NodeId) -> int:
        self._check(x)
        return self._version[x]

    def parent(self, x: NodeId) -> Optional[NodeId]:
        self._check(x)
        p = self._parent[x]
        return None if p == NIL else p

    def children(self, x: NodeId) -> Optional[tuple[NodeId, NodeId]]:
        self._check(x)
        if self._left[x] == NIL:
            return None
        return self._left[x], self._right[x]

    def sibling(self, x: NodeId) -> Optional[NodeId]:
        self._check(x)
        p = self._parent[x]
        if p == NIL:
            return None
        return self._right[p] if self._left[p] == x else self._left[p]

    def is_leaf(self, x: NodeId) -> bool:
        self._check(x)
        return self._left[x] == NIL

    def member_at(self, x: NodeId) -> Optional[Member]:
        self._check(x)
        return self._member[x]

    def leaf_of(self, member_id) -> NodeId:
        try:
            return self._leaf[member_id]
        except KeyError:
            raise UnknownMember(member_id) from None

    def members(self) -> list[Member]:
        """Members in left-to-right leaf order."""
        return [self._member[x] for x in self.leaves()]

    def path(self, x: NodeId) -> list[NodeId]:
        """Nodes from the root down to ``x`` inclusive."""
        self._check(x)
        out = []
        parent = self._parent
        while x != NIL:
            out.append(x)
            x = parent[x]
        out.reverse()
        return out

    def preorder_key(self, x: NodeId) -> tuple[int, ...]:
        """Branch bits from the root to ``x``; sorts nodes in preorder."""
        path = self.path(x)
        return tuple(0 if self._left[a] == b else 1 for a, b in zip(path, path[1:]))

    def nodes(self) -> Iterator[NodeId]:
        """Preorder traversal (left child first)."""
        if self.root is None:
            return
        stack = [self.root]
        left, right = self._left, self._right
        while stack:
            v = stack.pop()
            yield v
            if left[v] != NIL:
                stack.append(right[v])
                stack.append(left[v])

    def leaves(self) -> Iterator[NodeId]:
        left = self._left
        return (v for v in self.nodes() if left[v] == NIL)

    def height(self) -> int:
        if self.root is None:
            return 0
        return max(self._depth[x] for x in self.leaves())

    def max_member_prob(self) -> float:
        if not self._leaf:
            raise EmptyTree("no members")
        return max(self._weight[x] for x in self._leaf.values())

    def min_member_prob(self) -> float:
        if not self._leaf:
            raise EmptyTree("no members")
        return min(self._weight[x] for x in self._leaf.values())

    def locate(self, target: float) -> NodeId:
        """Leaf whose cumulative-weight interval (left to right) holds ``target``.

        With ``target`` uniform on [0, P_G) this samples a member with
        probability proportional to its withdrawal probability.
        """
        if self.root is None:
            raise EmptyTree("no members")
        x = self.root
        left, right, w = self._left, self._right, self._weight
        while left[x] != NIL:
            lw = w[left[x]]
            if target < lw:
                x = left[x]
            else:
                target -= lw
                x = right[x]
        return x

    def weight_view(self) -> np.ndarray:
        """Zero-copy float64 view of all slot weights (dead slots are +inf).

        Drop the view before mutating the tree; a live view pins the buffer.
        """
        return np.frombuffer(self._weight, dtype=np.float64)

    def depth_view(self) -> np.ndarray:
        return np.frombuffer(self._depth, dtype=np.int64)

    # -- mutations -------------------------------------------------------------

    def _shift_depths(self, x: NodeId, delta: int) -> None:
        stack = [x]
        depth, left, right = self._depth, self._left, self._right
        while stack:
            v = stack.pop()
            depth[v] += delta
            if left[v] != NIL:
                stack.append(left[v])
                stack.append(right[v])

    def _refresh_upward(self, x: NodeId) -> list[NodeId]:
        """Recompute weights and bump key versions from ``x`` up to the root."""
        touched = []
        w, left, right, parent, version = (
            self._weight, self._left, self._right, self._parent, self._version)
        while x != NIL:
            w[x] = w[left[x]] + w[right[x]]
            version[x] += 1
            touched.append(x)
            x = parent[x]
        touched.reverse()
        return touched

    def _replace_child(self, parent: int, old: NodeId, new: NodeId) -> None:
        if parent == NIL:
            self.root = new
        elif self._left[parent] == old:
            self._left[parent] = new
        else:
            self._right[parent] = new
        self._parent[new] = parent

    def _kill(self, x: NodeId) -> None:
        self._alive[x] = False
        self._weight[x] = math.inf
        self._parent[x] = self._left[x] = self._right[x] = NIL
        self._live -= 1

    def insert_at(self, member: Member, x: NodeId) -> TreeMutation:
        """Insert ``member`` at node ``x``.

        A new internal node takes ``x``'s place, with ``x`` as its left child
        and the new leaf as its right child. Every key from the root down to
        the new internal node is refreshed (``d_X + 1`` keys).
        """
        self._check(x)
        if member.id in self._leaf:
            raise DuplicateMember(f"member {member.id!r} already in tree")
        y = self._parent[x]
        d_x = self._depth[x]
        n = self._new_slot(NIL, None, 0.0, d_x)
        leaf = self._new_slot(n, member, float(member.p), d_x + 1)
        self._leaf[member.id] = leaf
        self._replace_child(y, x, n)
        self._left[n] = x
        self._right[n] = leaf
        self._parent[x] = n
        self._shift_depths(x, +1)
        refreshed = self._refresh_upward(n)
        return TreeMutation(
            kind="join", member=member, created=[n, leaf], refreshed=refreshed,
            path=refreshed + [leaf], join_depth=d_x)

    def withdraw(self, member_id) -> TreeMutation:
        """Remove a member's leaf and its parent; the sibling takes the parent's place.

        The surviving strict ancestors (``d_M - 1`` of them) are refreshed;
        the departed leaf key and its parent's key are destroyed.
        """
        x = self.leaf_of(member_id)
        member = self._member[x]
        d_m = self._depth[x]
        path = self.path(x)
        del self._leaf[member_id]
        if x == self.root:
            self._kill(x)
            self.root = None
            return TreeMutation(kind="withdraw", member=member, removed=[x],
                                path=path, withdraw_depth=d_m)
        n = self._parent[x]
        s = self._right[n] if self._left[n] == x else self._left[n]
        g = self._parent[n]
        self._replace_child(g, n, s)
        self._shift_depths(s, -1)
        self._kill(x)
        self._kill(n)
        refreshed = self._refresh_upward(g)
        return TreeMutation(kind="withdraw", member=member, removed=[x, n],
                            refreshed=refreshed, path=path, withdraw_depth=d_m)

    # -- checking ---------------------------------------------------------------

    def validate(self) -> list[Violation]:
        """Recompute every invariant from scratch; empty list means healthy."""
        out: list[Violation] = []
        if self.root is None:
            if self._live:
                out.append(Violation(None, "empty-tree", f"{self._live} live nodes without a root"))
            if self._leaf:
                out.append(Violation(None, "leaf-member-bijection",
                                     f"{len(self._leaf)} members without a root"))
            return out
        if not self.is_alive(self.root):
            return [Violation(self.root, "valid-handle", "root handle is dead")]
        if self._parent[self.root] != NIL:
            out.append(Violation(self.root, "root-parent", "root has a parent"))

        order: list[int] = []
        depth_of = {self.root: 0}
        stack = [self.root]
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen or not self.is_alive(v):
                out.append(Violation(v, "structure", "node reached twice or dead"))
                continue
            seen.add(v)
            order.append(v)
            l, r = self._left[v], self._right[v]
            if (l == NIL) != (r == NIL):
                out.append(Violation(v, "strictly-binary", "exactly one child"))
                continue
            if l == NIL:
                m = self._member[v]
                if m is None:
                    out.append(Violation(v, "leaf-member-bijection", "leaf without member"))
                elif self._leaf.get(m.id) != v:
                    out.append(Violation(v, "leaf-member-bijection",
                                         f"member {m.id!r} not indexed at this leaf"))
                continue
            if self._member[v] is not None:
                out.append(Violation(v, "leaf-member-bijection", "internal node holds a member"))
            for c in (l, r):
                if self._parent[c] != v:
                    out.append(Violation(c, "parent-link", f"parent is not {v}"))
                depth_of[c] = depth_of[v] + 1
                stack.append(c)
        if len(seen) != self._live:
            out.append(Violation(None, "structure",
                                 f"{self._live} live nodes but {len(seen)} reachable"))
        n_leaves = sum(1 for v in order if self._left[v] == NIL)
        if n_leaves != len(self._leaf):
            out.append(Violation(None, "leaf-member-bijection",
                                 f"{n_leaves} leaves but {len(self._leaf)} indexed members"))

        recomputed: dict[int, float] = {}
        for v in reversed(order):
            if self._left[v] == NIL:
                m = self._member[v]
                recomputed[v] = float(m.p) if m is not None else 0.0
                if m is not None and not (0.0 < m.p <= 1.0):
                    out.append(Violation(v, "probability-range", f"p={m.p!r}"))
            else:
                recomputed[v] = recomputed.get(self._left[v], 0.0) + \
                    recomputed.get(self._right[v], 0.0)
        for v in order:
            if abs(self._weight[v] - recomputed[v]) > WEIGHT_TOL:
                out.append(Violation(v, "weight-consistency",
                                     f"cached {self._weight[v]!r} != recomputed {recomputed[v]!r}"))
            if self._depth[v] != depth_of[v]:
                out.append(Violation(v, "depth", f"cached {self._depth[v]} != {depth_of[v]}"))
        p_g = math.fsum(self._member[v].p for v in order
                        if self._left[v] == NIL and self._member[v] is not None)
        if abs(recomputed[self.root] - p_g) > WEIGHT_TOL:
            out.append(Violation(self.root, "root-weight", f"{recomputed[self.root]!r} != {p_g!r}"))
        return out

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        """Preorder node list; weights are left out and recomputed on load."""
        nodes = []
        for v in self.nodes():
            entry = {"id": v, "key_version": self._version[v]}
            m = self._member[v]
            if m is not None:
                entry["member_id"] = m.id
                entry["p"] = m.p
            nodes.append(entry)
        return {"format": "lkhtree.keytree", "version": 1, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "KeyTree":
        try:
            nodes = doc["nodes"]
            if not isinstance(nodes, list):
                raise MalformedTree("'nodes' must be a list")
            tree = cls()
            if not nodes:
                return tree
            ids = [int(e["id"]) for e in nodes]
            if len(set(ids)) != len(ids) or min(ids) < 0:
                raise MalformedTree("node ids must be unique and nonnegative")
            size = max(ids) + 1
            tree._parent = [NIL] * size
            tree._left = [NIL] * size
            tree._right = [NIL] * size
            tree._member = [None] * size
            tree._version = [0] * size
            tree._alive = [False] * size
            tree._weight = array("d", [math.inf]) * size
            tree._depth = array("q", [0]) * size
            # preorder decode: a pending-children stack of (node, filled)
            pending: list[list[int]] = []
            for k, e in enumerate(nodes):
                v = ids[k]
                tree._alive[v] = True
                tree._live += 1
                tree._version[v] = int(e.get("key_version", 0))
                if tree._version[v] < 0:
                    raise MalformedTree(f"negative key version at node {v}")
                if pending:
                    top = pending[-1]
                    par = top[0]
                    if top[1] == 0:
                        tree._left[par] = v
                    else:
                        tree._right[par] = v
                    top[1] += 1
                    if top[1] == 2:
                        pending.pop()
                    tree._parent[v] = par
                    tree._depth[v] = tree._depth[par] + 1
                elif k > 0:
                    raise MalformedTree("nodes after a complete tree")
                if "member_id" in e:
                    m = Member(e["member_id"], float(e["p"]))
                    if m.id in tree._leaf:
                        raise DuplicateMember(f"member {m.id!r} appears twice")
                    tree._member[v] = m
                    tree._leaf[m.id] = v
                    tree._weight[v] = float(m.p)
                else:
                    pending.append([v, 0])
            if pending:
                raise MalformedTree("truncated node list: internal node missing children")
            tree.root = ids[0]
            for v in reversed(list(tree.nodes())):
                if tree._left[v] != NIL:
                    tree._weight[v] = tree._weight[tree._left[v]] + tree._weight[tree._right[v]]
            return tree
        except KeyTreeError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTree(str(exc)) from exc

    def copy(self) -> "KeyTree":
        other = KeyTree.__new__(KeyTree)
        other.root = self.root
        other._parent = list(self._parent)
        other._left = list(self._left)
        other._right = list(self._right)
        other._member = list(self._member)
        other._version = list(self._version)
        other._alive = list(self._alive)
        other._weight = array("d", self._weight)
        other._depth = array("q", self._depth)
        other._leaf = dict(self._leaf)
        other._live = self._live
        return other

    def shape(self) -> tuple:
        """Nested tuple of member ids and weights; ignores handles and versions."""
        def build(v):
            if self._left[v] == NIL:
                return (self._member[v].id, self._weight[v])
            return (build(self._left[v]), build(self._right[v]), self._weight[v])
        return () if self.root is None else build(self.root)


def _check_members(members: Iterable[Member]) -> list[Member]:
    members = list(members)
    if not members:
        raise EmptyTree("member list is empty")
    seen = set()
    for m in members:
        if not isinstance(m, Member):
            raise TypeError(f"expected Member, got {type(m).__name__}")
        if m.id in seen:
            raise DuplicateMember(f"duplicate member id {m.id!r}")
        seen.add(m.id)
    return members


def build_balanced(members: Iterable[Member]) -> KeyTree:
    members = _check_members(members)
    tree = KeyTree()

    def build(lo, hi):
        if hi - lo == 1:
            return tree.make_leaf(members[lo])
        mid = (lo + hi + 1) // 2
        return tree.make_internal(build(lo, mid), build(mid, hi))

    tree.set_root(build(0, len(members)))
    return tree


def build_from_members(members: Iterable[Member], shape: str = "huffman") -> KeyTree:
    """Build an initial tree; ``shape`` is ``"huffman"`` or ``"balanced"``."""
    members = _check_members(members)
    if shape == "huffman":
        from .analysis import build_huffman
        return build_huffman(members)
    if shape == "balanced":
        return build_balanced(members)
    raise ValueError(f"unknown shape {shape!r}")
