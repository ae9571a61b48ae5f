"""Executors that drive operation generators against a PersistentMemory."""

from __future__ import annotations

import weakref
from collections.abc import Callable
from dataclasses import dataclass, field

from nvtraverse.framework import Allocator, Strategy, TraversalStructure, run_operation
from nvtraverse.isa import SHARED, Alloc, Invoke, Phase, Respond, Traversed
from nvtraverse.pmem import PersistentMemory
from nvtraverse.verifier.history import HistoryEvent


def thread_body(structure: TraversalStructure, program, strategy: Strategy | None = None):
    """Generator running a list of (op, key) pairs, reporting invoke/respond."""
    for op, key in program:
        yield Invoke(op, key)
        result = yield from run_operation(structure, op, key, strategy)
        yield Respond(op, key, result)


class Listener:
    """Optional observer hooks; subclasses override what they need."""

    def on_shared(self, thread: int, instr, result) -> None:
        pass

    def on_pseudo(self, thread: int, instr, result) -> None:
        pass


_allocators: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def allocator_for(mem: PersistentMemory, thread: int) -> Allocator:
    """The allocator ``thread`` uses on ``mem``, shared across calls."""
    per_mem = _allocators.setdefault(mem, {})
    alloc = per_mem.get(thread)
    if alloc is None:
        alloc = per_mem[thread] = Allocator.after(mem, thread)
    return alloc


def run_sequential(
    mem: PersistentMemory,
    gen,
    thread: int = 0,
    *,
    allocator: Allocator | None = None,
    guard: Callable | None = None,
    listeners=(),
):
    """Drive ``gen`` to completion on the calling thread; return its value."""
    allocator = allocator or allocator_for(mem, thread)
    execute = mem.execute
    shared = SHARED
    result = None
    try:
        while True:
            instr = gen.send(result)
            if isinstance(instr, shared):
                if guard is not None:
                    guard(mem, instr, thread)
                result = execute(instr, thread)
                for ls in listeners:
                    ls.on_shared(thread, instr, result)
                continue
            if isinstance(instr, Alloc):
                result = allocator.alloc(instr.words)
            else:
                if isinstance(instr, Phase):
                    mem.log_phase(thread, instr.name, instr.edge)
                result = None
            for ls in listeners:
                ls.on_pseudo(thread, instr, result)
    except StopIteration as stop:
        return stop.value


@dataclass
class _Thread:
    gen: object
    allocator: Allocator
    instr: object = None  # next shared instruction, None when finished
    held: Invoke | None = None
    done: bool = False
    invoked_at: object = None


@dataclass
class ControlledRun:
    """Steps logical threads one shared-memory instruction at a time.

    An ``Invoke`` is recorded together with the operation's first shared
    instruction and a ``Respond`` right after its last one, so the recorded
    intervals are as tight as the schedule allows.
    """

    mem: PersistentMemory
    bodies: dict
    listeners: list = field(default_factory=list)
    guard: Callable | None = None
    history: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    op_counters: list = field(default_factory=list)  # (thread, op, Counters delta)

    def __post_init__(self):
        self.threads = {t: _Thread(gen, allocator_for(self.mem, t)) for t, gen in self.bodies.items()}
        for t in self.threads:
            self._advance(t, None)

    def enabled(self) -> list[int]:
        return [t for t, th in self.threads.items() if not th.done]

    def finished(self) -> bool:
        return all(th.done for th in self.threads.values())

    def next_instr(self, t: int):
        return self.threads[t].instr

    def _emit(self, kind: str, t: int, op, key, result=None) -> None:
        self.history.append(HistoryEvent(len(self.history), t, kind, op, key, result))

    def _advance(self, t: int, result) -> None:
        th = self.threads[t]
        gen = th.gen
        try:
            while True:
                instr = gen.send(result)
                if isinstance(instr, SHARED):
                    th.instr = instr
                    return
                result = None
                if isinstance(instr, Alloc):
                    result = th.allocator.alloc(instr.words)
                elif isinstance(instr, Invoke):
                    th.held = instr
                elif isinstance(instr, Respond):
                    self._emit("RES", t, instr.op, instr.key, instr.result)
                    self.op_counters.append((t, instr.op, self.mem.counters(t) - th.invoked_at))
                elif isinstance(instr, Phase):
                    self.mem.log_phase(t, instr.name, instr.edge)
                for ls in self.listeners:
                    ls.on_pseudo(t, instr, result)
        except StopIteration:
            th.instr = None
            th.done = True

    def step(self, t: int):
        th = self.threads[t]
        if th.done:
            raise ValueError(f"thread {t} has finished")
        if th.held is not None:
            self._emit("INV", t, th.held.op, th.held.key)
            th.invoked_at = self.mem.counters(t)
            th.held = None
        instr = th.instr
        if self.guard is not None:
            self.guard(self.mem, instr, t)
        result = self.mem.execute(instr, t)
        for ls in self.listeners:
            ls.on_shared(t, instr, result)
        self.schedule.append(t)
        self._advance(t, result)
        return instr, result

    def run(self, chooser: Callable[[list[int]], int]) -> None:
        while not self.finished():
            self.step(chooser(self.enabled()))

    def pending_ops(self) -> list[int]:
        """Threads whose current operation has been invoked but not answered."""
        return [
            t
            for t, th in self.threads.items()
            if th.invoked_at is not None and not th.done and th.held is None and self._open(t)
        ]

    def _open(self, t: int) -> bool:
        inv = res = 0
        for ev in self.history:
            if ev.thread == t:
                inv += ev.kind == "INV"
                res += ev.kind == "RES"
        return inv > res


class TraceRecorder(Listener):
    """Collects TraverseResults reported by the operation driver."""

    def __init__(self):
        self.traversals: list[tuple[int, object]] = []

    def on_pseudo(self, thread, instr, result):
        if isinstance(instr, Traversed):
            self.traversals.append((thread, instr.result))
