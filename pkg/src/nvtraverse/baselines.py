"""Reference persistence strategies: nothing at all, and flush+fence everywhere.

The flush-everything transformation persists each shared access before the
next one: every read, write and CAS (in any phase, recovery included) is
followed by a flush of the accessed word and a fence.  It does not know
which fields are immutable or which writes are node-local, so it flushes
them too.
"""

from __future__ import annotations

from nvtraverse.framework import Strategy, TraversalStructure
from nvtraverse.injector import Durable, NVTraverse, PersistencePolicy
from nvtraverse.isa import Cas, Fence, Flush, Read, Write

PERSIST_MODES = ("none", "nvtraverse", "izraelevitz")


def flush_fence_every_access(gen):
    result = None
    while True:
        try:
            instr = gen.send(result)
        except StopIteration as stop:
            return stop.value
        result = yield instr
        if type(instr) in (Read, Write, Cas):
            yield Flush(instr.addr)
            yield Fence()


class Izraelevitz(Strategy):
    name = "izraelevitz"

    def wrap_traverse(self, gen):
        return (yield from flush_fence_every_access(gen))

    def wrap_critical(self, gen):
        return (yield from flush_fence_every_access(gen))

    def wrap_recovery(self, gen):
        return (yield from flush_fence_every_access(gen))


class Volatile(Strategy):
    """The unmodified structure: no flushes, no fences."""

    name = "none"


def wrap_izraelevitz(structure: TraversalStructure) -> Durable:
    return Durable(structure, Izraelevitz())


def wrap_none(structure: TraversalStructure) -> Durable:
    return Durable(structure, Volatile())


def strategy_for(persist: str, policy: PersistencePolicy | None = None) -> Strategy:
    if persist == "none":
        return Volatile()
    if persist == "izraelevitz":
        return Izraelevitz()
    if persist == "nvtraverse":
        return NVTraverse(policy)
    raise ValueError(f"unknown persist mode {persist!r}; choose from {', '.join(PERSIST_MODES)}")
