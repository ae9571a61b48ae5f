"""Automatic flush/fence injection for traversal data structures.

Wrapping a conforming structure yields its durable version:

* nothing is persisted while traversing;
* before the critical method, ``ensure_reachable`` flushes the link that
  attached the topmost returned node and ``make_persistent`` flushes every
  mutable field the traversal read on the returned nodes, then fences once;
* inside the critical method every shared read and every write/CAS is
  followed by a flush of that word, every shared write/CAS is preceded by
  a fence, and every exit (return or restart) is preceded by a fence;
* recovery runs the structure's ``disconnect`` under the same rules.

Writes flagged ``local`` (initialising a node nobody else can reach yet)
are flushed but not fenced individually; the fence before the linking CAS
covers them.  Reads flagged ``immutable`` are not flushed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from nvtraverse.framework import (
    NEXT,
    ORIG,
    ContractViolation,
    NonconformingStructure,
    Strategy,
    TraversalStructure,
    TraverseResult,
    check_marked_immutability,
    check_traverse_purity,
    run_operation,
    run_recovery,
)
from nvtraverse.isa import Cas, Fence, Flush, Read, Write

MUTATIONS = {
    "no-ensure-reachable": {"ensure_reachable_flush": False},
    "no-make-persistent-fence": {"make_persistent_fence": False},
    "no-flush-after-read": {"flush_after_read": False},
    "no-fence-before-cas": {"fence_before_write": False},
}

# Mutations that exhaustive exploration does not kill, with the reason.
KNOWN_SURVIVORS = {
    "no-make-persistent-fence": (
        "redundant for the Harris list and hash table: a critical method never issues an "
        "externally visible instruction before its first fence (each write/CAS and each exit "
        "is preceded by one), and every modifying CAS targets a word in the caller's own "
        "read_fields, so the makePersistent flushes are always fenced before anything can "
        "depend on them or overwrite them"
    ),
}


@dataclass(frozen=True)
class PersistencePolicy:
    """Where flushes and fences go.  The boolean switches exist for mutation tests."""

    ensure_reachable: str = "field"  # "field" or "path:k"
    ensure_reachable_flush: bool = True
    make_persistent_fence: bool = True
    flush_after_read: bool = True
    fence_before_write: bool = True

    def __post_init__(self):
        if self.ensure_reachable != "field":
            mode, _, k = self.ensure_reachable.partition(":")
            if mode != "path" or not k.isdigit() or int(k) < 1:
                raise ValueError(f"ensure_reachable must be 'field' or 'path:k', got {self.ensure_reachable!r}")

    @property
    def path_length(self) -> int | None:
        if self.ensure_reachable == "field":
            return None
        return int(self.ensure_reachable.split(":")[1])

    def mutated(self, name: str) -> PersistencePolicy:
        try:
            return replace(self, **MUTATIONS[name])
        except KeyError:
            raise ValueError(f"unknown mutation {name!r}; choose from {sorted(MUTATIONS)}") from None

    @property
    def mutation(self) -> str | None:
        for name, change in MUTATIONS.items():
            if all(getattr(self, k) == v for k, v in change.items()):
                return name
        return None


def ensure_reachable(tr: TraverseResult, policy: PersistencePolicy):
    """Flush the link that makes the topmost returned node reachable."""
    if not policy.ensure_reachable_flush:
        return
    k = policy.path_length
    if k is None:
        first = tr.nodes[0]
        parent = yield Read(first + ORIG, immutable=True)
        if not parent:
            raise NonconformingStructure("original-parent", f"node {first} has no original parent")
        yield Flush(parent)
        return
    for link in dict.fromkeys(tr.parent_path[-k:]):
        yield Flush(link)


def make_persistent(tr: TraverseResult, policy: PersistencePolicy):
    """Flush every mutable field the traversal read on returned nodes, then fence."""
    for word in dict.fromkeys(tr.read_fields):
        yield Flush(word)
    if policy.make_persistent_fence:
        yield Fence()


def instrument_critical(gen, policy: PersistencePolicy):
    """Re-yield ``gen``'s instructions with Protocol-2 flushes and fences."""
    result = None
    while True:
        try:
            instr = gen.send(result)
        except StopIteration as stop:
            yield Fence()
            return stop.value
        kind = type(instr)
        if kind is Read:
            result = yield instr
            if policy.flush_after_read and not instr.immutable:
                yield Flush(instr.addr)
        elif kind is Cas or kind is Write:
            if policy.fence_before_write and not (kind is Write and instr.local):
                yield Fence()
            result = yield instr
            yield Flush(instr.addr)
        else:
            result = yield instr


class NVTraverse(Strategy):
    name = "nvtraverse"

    def __init__(self, policy: PersistencePolicy | None = None):
        self.policy = policy or PersistencePolicy()

    def before_critical(self, structure, tr):
        yield from ensure_reachable(tr, self.policy)
        yield from make_persistent(tr, self.policy)

    def wrap_critical(self, gen):
        return (yield from instrument_critical(gen, self.policy))

    def wrap_recovery(self, gen):
        return (yield from instrument_critical(gen, self.policy))

    def __repr__(self) -> str:
        return f"NVTraverse({self.policy})"


@dataclass
class Durable:
    """A structure bound to a persistence strategy."""

    structure: TraversalStructure
    strategy: Strategy

    def operation(self, op: str, key):
        return run_operation(self.structure, op, key, self.strategy)

    def recover(self):
        return run_recovery(self.structure, self.strategy)

    @property
    def persist(self) -> str:
        return self.strategy.name


def recover(structure: TraversalStructure, strategy: Strategy | None = None):
    """Recovery generator: the structure's disconnect under the strategy's rules."""
    return run_recovery(structure, strategy or NVTraverse())


def smoke_check(structure: TraversalStructure) -> None:
    """Run a few sequential operations on a scratch copy and check contracts.

    Raises :class:`ContractViolation` carrying the violated property id.
    """
    from nvtraverse.execution import TraceRecorder, run_sequential
    from nvtraverse.pmem import PersistentMemory

    fresh = getattr(structure, "fresh", None)
    if fresh is None:
        return
    mem = PersistentMemory(trace=True)
    copy = fresh(mem)
    rec = TraceRecorder()
    program = [("insert", 2), ("insert", 1), ("insert", 3), ("find", 2), ("delete", 2), ("find", 2), ("delete", 1)]
    for op, key in program:
        run_sequential(mem, run_operation(copy, op, key), 0, listeners=[rec])
    if check_traverse_purity(mem.trace, persistence=False):
        raise NonconformingStructure("traverse-purity", "traverse modified shared memory")
    if not all(tr.is_suffix() for _, tr in rec.traversals):
        raise NonconformingStructure("suffix", "traverse returned a non-suffix of its path")
    if check_marked_immutability(mem.trace):
        raise NonconformingStructure("mark", "a marked node was modified")


def wrap(structure: TraversalStructure, policy: PersistencePolicy | None = None, *, check: bool = True) -> Durable:
    """NVTraverse version of ``structure``; nonconforming structures are rejected."""
    if check:
        smoke_check(structure)
    return Durable(structure, NVTraverse(policy))


# -- protocol trace checks ------------------------------------------------------


@dataclass
class ProtocolViolation:
    seq: int
    thread: int
    rule: str


def check_protocols(trace) -> list[ProtocolViolation]:
    """Validate flush/fence placement in an injected trace.

    Rules: no FL/FE while traversing; between traverse and critical exactly
    one FE preceded by at least one FL; in critical/recovery phases every
    shared read and every write/CAS is flushed and every flush fenced before
    the next shared write/CAS or phase exit, and a fence occurs between the
    last externally visible instruction and the next one.
    """
    out: list[ProtocolViolation] = []
    state: dict[int, dict] = {}

    def st(t):
        s = state.get(t)
        if s is None:
            s = state[t] = {
                "phase": None,
                "between": False,
                "fences": 0,
                "flushes": 0,
                "unflushed": set(),
                "unfenced": 0,
                "fenced": False,
            }
        return s

    for ev in trace:
        s = st(ev.thread)
        if ev.op == "PH":
            name, edge = ev.arg1, ev.arg2
            if edge == "begin":
                if name == "critical":
                    if s["between"] and (s["fences"] != 1 or s["flushes"] < 1):
                        out.append(ProtocolViolation(ev.seq, ev.thread, "pre-critical-barrier"))
                    s["between"] = False
                if name in ("critical", "recovery"):
                    s.update(unflushed=set(), unfenced=0, fenced=False)
                s["phase"] = name
            else:
                if s["phase"] in ("critical", "recovery"):
                    if s["unflushed"] or s["unfenced"] or not s["fenced"]:
                        out.append(ProtocolViolation(ev.seq, ev.thread, "fence-before-exit"))
                if name == "traverse":
                    s.update(between=True, fences=0, flushes=0)
                s["phase"] = None
            continue
        phase = s["phase"]
        if phase == "traverse":
            if ev.op in ("FL", "FE", "W", "CAS"):
                out.append(ProtocolViolation(ev.seq, ev.thread, "traverse-silence"))
            continue
        if phase is None:
            if s["between"]:
                if ev.op == "FE":
                    s["fences"] += 1
                elif ev.op == "FL":
                    if s["fences"]:
                        out.append(ProtocolViolation(ev.seq, ev.thread, "pre-critical-barrier"))
                    s["flushes"] += 1
            continue
        if ev.op == "R":
            if ev.arg1 != "imm":
                s["unflushed"].add(ev.addr)
        elif ev.op == "FL":
            s["unflushed"].discard(ev.addr)
            s["unfenced"] += 1
        elif ev.op == "FE":
            s["unfenced"] = 0
            s["fenced"] = True
        elif ev.op in ("W", "CAS"):
            local = ev.op == "W" and ev.arg2 == "local"
            if not local:
                if s["unflushed"]:
                    out.append(ProtocolViolation(ev.seq, ev.thread, "flush-after-read"))
                if s["unfenced"] or not s["fenced"]:
                    out.append(ProtocolViolation(ev.seq, ev.thread, "fence-before-write"))
            s["unflushed"].add(ev.addr)
            if not local and (ev.op == "W" or ev.result == 1):
                s["fenced"] = False
    return out


__all__ = [
    "KNOWN_SURVIVORS",
    "MUTATIONS",
    "ContractViolation",
    "Durable",
    "NVTraverse",
    "PersistencePolicy",
    "ProtocolViolation",
    "check_protocols",
    "ensure_reachable",
    "instrument_critical",
    "make_persistent",
    "recover",
    "smoke_check",
    "wrap",
]
