"""Traversal data structures: node layout, operation skeleton, contracts.

An operation attempt runs ``find_entry`` -> ``traverse`` -> ``critical``
and repeats while the critical method asks for a restart.  The
persistence strategy sits between the phases and may wrap the
instruction streams of each one; :class:`Strategy` itself adds nothing,
which is the plain volatile structure.

Nodes are four words (key, value, next, original parent), aligned on
four-word boundaries so the low bit of a link is free for the deletion
mark.
"""

from __future__ import annotations

from collections.abc import Generator, Iterable
from dataclasses import dataclass, field

from nvtraverse.isa import (
    Alloc,
    Cas,
    Fence,
    Phase,
    Read,
    Traversed,
    Write,
)

NODE_WORDS = 4
KEY, VALUE, NEXT, ORIG = range(NODE_WORDS)
NULL = 0
MARK_BIT = 1
ROOT_BASE = 1 << 40  # root slots live above every arena

HEAD_KEY = -(1 << 63)
TAIL_KEY = (1 << 63) - 1

OPS = ("insert", "delete", "find")


class ContractViolation(Exception):
    """A structure broke one of the traversal-structure properties."""

    def __init__(self, prop: str, message: str):
        super().__init__(f"[{prop}] {message}")
        self.prop = prop


class NonconformingStructure(ContractViolation):
    pass


def is_marked(link: int) -> bool:
    return bool(link & MARK_BIT)


def unmark(link: int) -> int:
    return link & ~MARK_BIT


def with_mark(link: int) -> int:
    return link | MARK_BIT


def node_of(addr: int) -> int | None:
    """Base address of the node owning word ``addr``; None for root slots."""
    if addr >= ROOT_BASE or addr <= 0:
        return None
    return addr - addr % NODE_WORDS


def arena_base(thread: int) -> int:
    # thread-local arenas keep addresses independent of the interleaving
    return (thread + 2) << 24


ARENA_WORDS = 1 << 24


class Allocator:
    """Bump allocator over a thread's arena; nodes are never reused."""

    def __init__(self, thread: int, start: int | None = None):
        self.thread = thread
        self.next = arena_base(thread) if start is None else start

    @classmethod
    def after(cls, mem, thread: int) -> Allocator:
        """Allocator starting past every word already touched in the arena."""
        lo = arena_base(thread)
        used = [a for a in mem.addresses() if lo <= a < lo + ARENA_WORDS]
        if not used:
            return cls(thread)
        top = max(used)
        return cls(thread, top - top % NODE_WORDS + NODE_WORDS)

    def alloc(self, words: int) -> int:
        addr = self.next
        self.next += -(-words // NODE_WORDS) * NODE_WORDS
        return addr


@dataclass
class TraverseResult:
    nodes: list[int]  # returned nodes, topmost first
    read_fields: list[int] = field(default_factory=list)  # mutable words read on returned nodes
    parent_path: list[int] = field(default_factory=list)  # link words leading to nodes[0]
    visited: list[int] = field(default_factory=list)  # every node on the final traversal path

    def is_suffix(self) -> bool:
        k = len(self.nodes)
        return k > 0 and self.visited[-k:] == self.nodes


class Strategy:
    """Persistence strategy hooks.  The base class persists nothing."""

    name = "none"

    def wrap_traverse(self, gen):
        return (yield from gen)

    def before_critical(self, structure, tr: TraverseResult):
        return
        yield

    def wrap_critical(self, gen):
        return (yield from gen)

    def wrap_recovery(self, gen):
        return (yield from gen)


class TraversalStructure:
    """Interface a conforming structure implements.

    ``traverse`` and ``critical`` are generators over :mod:`nvtraverse.isa`
    instructions; ``find_entry`` is local computation from the root.
    """

    def find_entry(self, key) -> int:
        raise NotImplementedError

    def traverse(self, entry: int, key) -> Generator:
        raise NotImplementedError

    def critical(self, op: str, tr: TraverseResult, key) -> Generator:
        raise NotImplementedError

    def disconnect(self) -> Generator:
        raise NotImplementedError

    def entry_nodes(self) -> set[int]:
        raise NotImplementedError

    def root_words(self) -> set[int]:
        raise NotImplementedError


def run_operation(structure: TraversalStructure, op: str, key, strategy: Strategy | None = None):
    """One operation: attempts of entry -> traverse -> [persist] -> critical."""
    strategy = strategy or Strategy()
    while True:
        yield Phase("entry", "begin")
        entry = structure.find_entry(key)
        yield Phase("entry", "end")
        yield Phase("traverse", "begin")
        tr = yield from strategy.wrap_traverse(structure.traverse(entry, key))
        yield Phase("traverse", "end")
        yield Traversed(tr)
        yield from strategy.before_critical(structure, tr)
        yield Phase("critical", "begin")
        restart, value = yield from strategy.wrap_critical(structure.critical(op, tr, key))
        yield Phase("critical", "end")
        if not restart:
            return value


def run_recovery(structure: TraversalStructure, strategy: Strategy | None = None):
    strategy = strategy or Strategy()
    yield Phase("recovery", "begin")
    yield from strategy.wrap_recovery(structure.disconnect())
    yield Phase("recovery", "end")


def mark(node: int):
    """Set the deletion mark on ``node.next``; True iff this call set it."""
    nxt = yield Read(node + NEXT)
    while not is_marked(nxt):
        if (yield Cas(node + NEXT, nxt, with_mark(nxt))):
            return True
        nxt = yield Read(node + NEXT)
    return False


# -- runtime contract checks ------------------------------------------------


def _phase_spans(trace) -> Iterable[tuple[object, str | None]]:
    """Yield (event, phase the event's thread is currently in)."""
    current: dict[int, str | None] = {}
    for ev in trace:
        if ev.op == "PH":
            current[ev.thread] = ev.arg1 if ev.arg2 == "begin" else None
            continue
        yield ev, current.get(ev.thread)


def check_traverse_purity(trace, *, persistence: bool = True) -> list[int]:
    """Sequence numbers of modifying (and, by default, FL/FE) events in a traverse phase."""
    bad = {"W", "CAS", "FL", "FE"} if persistence else {"W", "CAS"}
    return [ev.seq for ev, phase in _phase_spans(trace) if phase == "traverse" and ev.op in bad]


def check_marked_immutability(trace) -> list[int]:
    """Modifications that hit a node after the event that set its mark."""
    marked: set[int] = set()
    violations = []
    for ev in trace:
        if ev.op == "W" or (ev.op == "CAS" and ev.result == 1):
            node = node_of(ev.addr)
            if node is None:
                continue
            if node in marked:
                violations.append(ev.seq)
            elif ev.op == "CAS" and ev.addr == node + NEXT and is_marked(ev.arg2) and not is_marked(ev.arg1):
                marked.add(node)
    return violations


class MarkGuard:
    """Checked-mode hook: refuse any modification of a marked node."""

    def __call__(self, mem, instr, thread: int) -> None:
        if not isinstance(instr, (Write, Cas)):
            return
        node = node_of(instr.addr)
        if node is None or not is_marked(mem.peek(node + NEXT)):
            return
        if isinstance(instr, Cas) and mem.peek(instr.addr) != instr.expected:
            return  # fails, modifies nothing
        raise ContractViolation(
            "mark", f"thread {thread} modifies word {instr.addr} of marked node {node}"
        )


class OperationDataAuditor:
    """Flags shared accesses that were not reached from the root in this attempt.

    At each attempt start the known set resets to the entry nodes; reading a
    link or original-parent field adds the node it names, and allocation adds
    the new node.  Anything else (say, a node address cached from an earlier
    attempt) is a violation.
    """

    def __init__(self, structure: TraversalStructure):
        self.structure = structure
        self.known: dict[int, set[int]] = {}
        self.violations: list[tuple[int, object]] = []

    def on_pseudo(self, thread: int, instr, result) -> None:
        if isinstance(instr, Phase) and instr.name == "entry" and instr.edge == "begin":
            self.known[thread] = set(self.structure.entry_nodes())
        elif isinstance(instr, Phase) and instr.name == "recovery" and instr.edge == "begin":
            self.known[thread] = set(self.structure.entry_nodes())
        elif isinstance(instr, Alloc):
            self.known.setdefault(thread, set()).add(result)

    def on_shared(self, thread: int, instr, result) -> None:
        if isinstance(instr, Fence):
            return
        known = self.known.setdefault(thread, set(self.structure.entry_nodes()))
        addr = instr.addr
        node = node_of(addr)
        if node is None:
            if addr not in self.structure.root_words():
                self.violations.append((thread, instr))
            return
        if node not in known:
            self.violations.append((thread, instr))
            return
        if isinstance(instr, Read):
            offset = addr - node
            if offset == NEXT and unmark(result) != NULL:
                known.add(unmark(result))
            elif offset == ORIG and result:
                parent = node_of(result)
                if parent is not None:
                    known.add(parent)


def check_suffix(tr: TraverseResult) -> bool:
    return tr.is_suffix()
