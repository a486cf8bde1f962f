"""Key-version history and forward/backward security audits.

Keys are modelled as ``(node, version)`` pairs. The epoch keeps, for every
pair, the steps during which it was live; a departed member is safe when
none of the pairs it held outlives its withdrawal, and a newcomer is safe
when none of the pairs it receives existed before it joined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, TextIO

from .key_tree import KeyTree, TreeMutation

GENESIS_STEP = 0


class InconsistentSnapshot(ValueError):
    """A mutation does not match the version changes observed in the tree."""


class MalformedEpoch(ValueError):
    pass


@dataclass
class EpochEntry:
    step: int
    kind: str
    member_id: Hashable
    p: float
    path: list[int]
    held: dict[int, int]       # the member's keys: after a join, before a withdrawal
    changes: dict[int, int]    # node -> version of every key that became live
    removed: list[int]
    depth: int                 # join depth d_X, or withdrawal depth d_M

    @property
    def cost(self) -> int:
        return len(self.changes)

    def to_dict(self) -> dict:
        return {
            "type": self.kind, "step": self.step, "member_id": self.member_id,
            "p": self.p, "path": self.path,
            "held": sorted([k, v] for k, v in self.held.items()),
            "changes": sorted([k, v] for k, v in self.changes.items()),
            "removed": self.removed, "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EpochEntry":
        return cls(
            step=int(doc["step"]), kind=doc["type"], member_id=doc["member_id"],
            p=float(doc["p"]), path=[int(x) for x in doc["path"]],
            held={int(k): int(v) for k, v in doc["held"]},
            changes={int(k): int(v) for k, v in doc["changes"]},
            removed=[int(x) for x in doc["removed"]], depth=int(doc["depth"]))


@dataclass
class KeyEpoch:
    """Append-only history of mutations applied to one tree."""

    genesis: dict[int, int] = field(default_factory=dict)
    genesis_members: dict[int, Hashable] = field(default_factory=dict)
    entries: list[EpochEntry] = field(default_factory=list)
    live: dict[int, int] = field(default_factory=dict)
    # (node, version) -> list of [born_step, died_step or None]
    lifetimes: dict[tuple[int, int], list[list]] = field(default_factory=dict)

    @classmethod
    def start(cls, tree: KeyTree) -> "KeyEpoch":
        epoch = cls()
        for x in tree.nodes():
            v = tree.key_version(x)
            epoch.genesis[x] = v
            m = tree.member_at(x)
            if m is not None:
                epoch.genesis_members[x] = m.id
        epoch._reset_live()
        return epoch

    def _reset_live(self) -> None:
        self.live = dict(self.genesis)
        self.lifetimes = {(x, v): [[GENESIS_STEP, None]] for x, v in self.genesis.items()}

    def _kill_pair(self, x: int, step: int) -> None:
        old = self.live.pop(x)
        self.lifetimes[(x, old)][-1][1] = step

    def _apply(self, entry: EpochEntry) -> None:
        step = entry.step
        if entry.kind == "withdraw":
            self._check_held(entry)
        for x in entry.removed:
            if x not in self.live:
                raise InconsistentSnapshot(f"step {step}: removed node {x} is not live")
            self._kill_pair(x, step)
        for x, v in entry.changes.items():
            if x in self.live:
                if v <= self.live[x]:
                    raise InconsistentSnapshot(
                        f"step {step}: version of node {x} went {self.live[x]} -> {v}")
                self._kill_pair(x, step)
            self.live[x] = v
            self.lifetimes.setdefault((x, v), []).append([step, None])
        if entry.kind == "join":
            self._check_held(entry)
        self.entries.append(entry)

    def _check_held(self, entry: EpochEntry) -> None:
        # a member can only hold keys that are live at that moment
        for x, v in entry.held.items():
            if self.live.get(x) != v:
                raise InconsistentSnapshot(
                    f"step {entry.step}: member holds node {x} version {v}, "
                    f"live version is {self.live.get(x)}")

    def record(self, tree: KeyTree, mutation: TreeMutation) -> "KeyEpoch":
        """Append ``mutation`` after checking it against the tree's versions."""
        step = len(self.entries) + 1
        new_nodes = set(mutation.refreshed).union(mutation.created)
        for x in mutation.removed:
            if tree.is_alive(x):
                raise InconsistentSnapshot(f"removed node {x} is still in the tree")
        changes = {}
        for x in new_nodes:
            if not tree.is_alive(x):
                raise InconsistentSnapshot(f"refreshed node {x} is not in the tree")
            v = tree.key_version(x)
            if x in self.live and v != self.live[x] + 1:
                raise InconsistentSnapshot(
                    f"node {x} version {v}, expected {self.live[x] + 1}")
            changes[x] = v
        if mutation.kind == "join":
            for x in mutation.path:
                if x not in new_nodes and tree.key_version(x) != self.live.get(x):
                    raise InconsistentSnapshot(f"node {x} changed version without a refresh")
            held = {x: tree.key_version(x) for x in mutation.path}
            depth = mutation.join_depth
        elif mutation.kind == "withdraw":
            try:
                held = {x: self.live[x] for x in mutation.path}
            except KeyError as exc:
                raise InconsistentSnapshot(f"path node {exc} unknown to the epoch") from None
            depth = mutation.withdraw_depth
        else:
            raise InconsistentSnapshot(f"unknown mutation kind {mutation.kind!r}")
        self._apply(EpochEntry(
            step=step, kind=mutation.kind, member_id=mutation.member.id,
            p=mutation.member.p, path=list(mutation.path), held=held, changes=changes,
            removed=list(mutation.removed), depth=depth))
        return self

    # -- audits -----------------------------------------------------------------

    def _events(self, member_id, kind: str) -> list[EpochEntry]:
        return [e for e in self.entries if e.kind == kind and e.member_id == member_id]

    def check_forward_security(self, member_id) -> bool:
        """No key held at withdrawal time is live at any later step."""
        events = self._events(member_id, "withdraw")
        if not events:
            raise KeyError(f"member {member_id!r} never withdrew")
        for e in events:
            for pair in e.held.items():
                for born, died in self.lifetimes.get(pair, ()):
                    if died is None or died > e.step:
                        return False
        return True

    def check_backward_security(self, member_id) -> bool:
        """No key received at join time was live before the join."""
        events = self._events(member_id, "join")
        if not events:
            raise KeyError(f"member {member_id!r} never joined")
        for e in events:
            for pair in e.held.items():
                for born, died in self.lifetimes.get(pair, ()):
                    if born < e.step:
                        return False
        return True

    def audit(self) -> list[str]:
        """Every security violation in the history, one message each."""
        out = []
        joined = {e.member_id for e in self.entries if e.kind == "join"}
        left = {e.member_id for e in self.entries if e.kind == "withdraw"}
        for mid in sorted(left, key=repr):
            if not self.check_forward_security(mid):
                out.append(f"forward security violated for member {mid!r}")
        for mid in sorted(joined, key=repr):
            if not self.check_backward_security(mid):
                out.append(f"backward security violated for member {mid!r}")
        return out

    def costs(self, kind: str) -> list[int]:
        return [e.cost for e in self.entries if e.kind == kind]

    # -- JSON lines ---------------------------------------------------------------

    def write_jsonl(self, fp: TextIO) -> None:
        fp.write(json.dumps({
            "type": "genesis",
            "versions": sorted([x, v] for x, v in self.genesis.items()),
            "members": sorted(([x, m] for x, m in self.genesis_members.items()),
                              key=lambda r: r[0]),
        }) + "\n")
        for e in self.entries:
            fp.write(json.dumps(e.to_dict()) + "\n")
        fp.write(json.dumps({"type": "end", "entries": len(self.entries)}) + "\n")

    @classmethod
    def read_jsonl(cls, lines: Iterable[str]) -> "KeyEpoch":
        epoch = cls()
        ended = False
        started = False
        try:
            for lineno, line in enumerate(lines, 1):
                if not line.strip():
                    continue
                if ended:
                    raise MalformedEpoch(f"line {lineno}: content after end marker")
                doc = json.loads(line)
                kind = doc["type"]
                if not started:
                    if kind != "genesis":
                        raise MalformedEpoch("first line must be the genesis record")
                    epoch.genesis = {int(x): int(v) for x, v in doc["versions"]}
                    epoch.genesis_members = {int(x): m for x, m in doc["members"]}
                    epoch._reset_live()
                    started = True
                elif kind == "end":
                    if int(doc["entries"]) != len(epoch.entries):
                        raise MalformedEpoch("entry count does not match end marker")
                    ended = True
                elif kind in ("join", "withdraw"):
                    entry = EpochEntry.from_dict(doc)
                    if entry.step != len(epoch.entries) + 1:
                        raise MalformedEpoch(f"line {lineno}: step {entry.step} out of order")
                    epoch._apply(entry)
                else:
                    raise MalformedEpoch(f"line {lineno}: unknown record type {kind!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (MalformedEpoch, InconsistentSnapshot)):
                raise
            raise MalformedEpoch(str(exc)) from exc
        if not ended:
            raise MalformedEpoch("missing end marker (truncated file?)")
        return epoch


def record(epoch: Optional[KeyEpoch], tree: KeyTree, mutation: TreeMutation) -> KeyEpoch:
    if epoch is None:
        raise ValueError("start an epoch with KeyEpoch.start(tree) before recording")
    return epoch.record(tree, mutation)


def check_forward_security(epoch: KeyEpoch, member_id) -> bool:
    return epoch.check_forward_security(member_id)


def check_backward_security(epoch: KeyEpoch, member_id) -> bool:
    return epoch.check_backward_security(member_id)
