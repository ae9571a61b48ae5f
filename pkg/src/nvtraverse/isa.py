"""Instruction objects yielded by data-structure operations.

Operations are generators: they ``yield`` one of these and receive the
instruction's result back.  Shared-memory instructions (``Read``,
``Write``, ``Cas``, ``Flush``, ``Fence``) are scheduling points for the
controlled explorer.  The remaining ones are local bookkeeping that an
executor handles without giving other threads a turn.
"""

from __future__ import annotations

from typing import Any, NamedTuple


class Read(NamedTuple):
    addr: int
    immutable: bool = False


class Write(NamedTuple):
    addr: int
    value: int
    local: bool = False  # initialising a node no other thread can see yet


class Cas(NamedTuple):
    addr: int
    expected: int
    new: int


class Flush(NamedTuple):
    addr: int


class Fence(NamedTuple):
    pass


class Alloc(NamedTuple):
    words: int


class Phase(NamedTuple):
    name: str  # entry | traverse | critical | recovery
    edge: str  # begin | end


class Invoke(NamedTuple):
    op: str
    key: Any


class Respond(NamedTuple):
    op: str
    key: Any
    result: Any


class Traversed(NamedTuple):
    result: Any  # TraverseResult, reported for contract checks


SHARED = (Read, Write, Cas, Flush, Fence)
MODIFYING = (Write, Cas)
