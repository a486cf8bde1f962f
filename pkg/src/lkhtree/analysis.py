"""Withdrawal-cost metrics, Huffman construction and closed-form bounds.

All logarithms are base 2.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .key_tree import EmptyTree, KeyTree, Member, _check_members

ALPHA = (1 + math.sqrt(5)) / 2
LOG_ALPHA = math.log2(ALPHA)
LOG_E = math.log2(math.e)

K1 = 1 / LOG_ALPHA
K2 = K1 * math.log2(math.sqrt(5) / ALPHA)
# nearest-heavy-ancestor threshold minimising the depth bound (P_max = 1)
T_M = (2 + LOG_ALPHA) / (2 * (1 - LOG_ALPHA))
K3 = (-math.log2(3 * LOG_ALPHA / (2 * (1 - LOG_ALPHA)))
      + K1 * (math.log2(3 / (1 - LOG_ALPHA)) + math.log2(math.sqrt(5) / ALPHA)))
K4 = (-(K1 - 1) * math.log2(K1 - 1)
      + K1 * math.log2(2 * math.sqrt(5) * math.e / (ALPHA * LOG_E)))


def t_tilde_m(p_max: float) -> float:
    """Upper-anchor threshold used for Algorithm-3 trees."""
    return ((2 + LOG_ALPHA) * p_max + 4 + LOG_ALPHA) / (2 * (1 - LOG_ALPHA))


def s_tilde_m(p_min: float) -> float:
    """Lower-anchor threshold used for Algorithm-3 trees."""
    return LOG_E / (2 * LOG_ALPHA) * p_min + 1


def bound_constants() -> dict[str, float]:
    return {"alpha": ALPHA, "K1": K1, "K2": K2, "t_m": T_M, "K3": K3, "K4": K4}


class BoundInapplicable(ValueError):
    """The tree is too small for the bound's hypotheses (a log argument is <= 0)."""


def _log2_positive(x: float, what: str) -> float:
    if not x > 0:
        raise BoundInapplicable(f"{what} = {x!r} is not positive")
    return math.log2(x)


@dataclass(frozen=True)
class CostReport:
    n: int
    P_G: float
    P_max: float
    P_min: float
    L: float
    l: float  # noqa: E741
    entropy: float

    FIELDS = ("n", "P_G", "P_max", "P_min", "L", "l", "entropy")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CostReport":
        return cls(n=int(doc["n"]), **{k: float(doc[k]) for k in cls.FIELDS[1:]})

    def csv_row(self, header: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.FIELDS)
        w.writerow([repr(getattr(self, k)) if isinstance(getattr(self, k), float)
                    else getattr(self, k) for k in self.FIELDS])
        return buf.getvalue()


def entropy(probs: Iterable[float]) -> float:
    """Entropy in bits of the normalised distribution ``p / sum(p)``."""
    probs = [float(p) for p in probs]
    total = math.fsum(probs)
    if total <= 0:
        raise ValueError("probabilities must have a positive sum")
    h = -math.fsum(p / total * math.log2(p / total) for p in probs if p > 0)
    return max(h, 0.0)


def withdrawal_costs(tree: KeyTree) -> CostReport:
    """Expected withdrawal cost L, normalised cost l and entropy for a tree."""
    if tree.root is None:
        raise EmptyTree("no members")
    probs, terms = [], []
    for x in tree.leaves():
        p = tree.member_at(x).p
        probs.append(p)
        terms.append(p * tree.depth(x))
    p_g = math.fsum(probs)
    big_l = math.fsum(terms)
    return CostReport(n=len(probs), P_G=p_g, P_max=max(probs), P_min=min(probs),
                      L=big_l, l=big_l / p_g, entropy=entropy(probs))


def entropy_bounds(n: int, p_max: float, p_min: float) -> tuple[float, float]:
    """``(k log n, log n / k)`` with ``k = p_min / p_max``.

    The lower value is only a valid bound on H once the group is large
    (normalised probabilities well below one); the upper one always holds.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0 < p_min <= p_max <= 1):
        raise ValueError("need 0 < p_min <= p_max <= 1")
    k = p_min / p_max
    log_n = math.log2(n)
    return k * log_n, log_n / k


def build_huffman(members: Sequence[Member]) -> KeyTree:
    """Bottom-up Huffman merge; equal weights merge the earliest-created subtrees first."""
    members = _check_members(members)
    tree = KeyTree()
    heap = []
    for order, m in enumerate(members):
        heap.append((float(m.p), order, tree.make_leaf(m)))
    heapq.heapify(heap)
    order = len(heap)
    while len(heap) > 1:
        _, _, a = heapq.heappop(heap)
        _, _, b = heapq.heappop(heap)
        x = tree.make_internal(a, b)
        heapq.heappush(heap, (tree.weight(x), order, x))
        order += 1
    tree.set_root(heap[0][2])
    return tree


def selcuk_depth_bound(p_m: float, p_g: float) -> float:
    """Earlier per-leaf bound ``K1 (log P_G - log P_M) + K2``."""
    return K1 * (math.log2(p_g) - math.log2(p_m)) + K2


def selcuk_l_bound(report: CostReport) -> float:
    return K1 * report.entropy + K2


def _check_consistent(n, p_g, p_max, p_min=None):
    slack = 1e-9 * max(1.0, p_g)
    if not (0 < p_max <= 1):
        raise ValueError(f"P_max must lie in (0, 1], got {p_max!r}")
    if p_min is not None:
        if not (0 < p_min <= p_max):
            raise ValueError("need 0 < P_min <= P_max")
        if n is not None and not (n * p_min - slack <= p_g <= n * p_max + slack):
            raise ValueError(f"P_G = {p_g!r} outside [n P_min, n P_max]")


def thm3_depth_bound(p_m: float, p_g: float, p_max: float) -> float:
    """Strict upper bound on the depth of a member with probability ``p_m``
    in a large tree built by Algorithm 1."""
    _check_consistent(None, p_g, p_max)
    if not (0 < p_m <= p_max):
        raise ValueError("need 0 < P_M <= P_max")
    return (_log2_positive(p_g, "P_G") - K1 * math.log2(p_m)
            + (K1 - 1) * math.log2(p_max)
            + _log2_positive(1 - p_max / p_g, "1 - P_max/P_G") + K3)


def thm4_l_bound(report: CostReport) -> float:
    """Asymptotically tight bound on l for Algorithm-1 trees."""
    r = report
    _check_consistent(r.n, r.P_G, r.P_max, r.P_min)
    return (r.entropy + (K1 - 1) * math.log2(r.P_max / r.P_min)
            + _log2_positive(1 - r.P_max / r.P_G, "1 - P_max/P_G") + K3)


def thm5_l_bound(report: CostReport) -> float:
    """Bound on l for Algorithm-3 trees; needs P_G > P_max + 2."""
    r = report
    _check_consistent(r.n, r.P_G, r.P_max, r.P_min)
    return (r.entropy + math.log2(r.P_max) + (K1 - 1) * math.log2(3 * r.P_max + 5)
            - K1 * math.log2(r.P_min) + (r.P_max + 4) / r.P_min
            + _log2_positive(1 - (r.P_max + 2) / r.P_G, "1 - (P_max+2)/P_G") + K4)


def thm3_hypothesis(p_g: float) -> bool:
    """Whether every leaf has an ancestor heavier than ``t_m``.

    Leaves weigh at most 1 < t_m and the root is the heaviest node on any
    path, so this reduces to ``P_G > t_m``.
    """
    return p_g > T_M


def thm5_hypothesis(p_g: float, p_max: float) -> bool:
    return p_g > t_tilde_m(p_max)


def lemma3_check(report: CostReport, slack: float = 1e-9) -> bool:
    """``-log P_G <= log(1/P_min) - H`` within ``slack``."""
    lhs = -math.log2(report.P_G)
    rhs = -math.log2(report.P_min) - report.entropy
    return lhs <= rhs + slack
