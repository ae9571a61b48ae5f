"""Linearizability and durable linearizability of set histories.

A history is reduced to operations with an invocation point, a response
point and a result.  An operation that never responded is *optional*: it
may be linearized anywhere after its invocation or left out entirely.  If
a crash cut it off, its interval ends at the crash, so when it does take
effect it precedes everything invoked after the crash.

``check_*`` search for a linearization depth first, memoizing failed
(linearized-set, model-state) pairs.  ``brute_force_linearizable`` tries
every subset and permutation and exists to cross-check the search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from nvtraverse.verifier.history import HistoryError, HistoryEvent

INF = math.inf


@dataclass(frozen=True)
class Operation:
    id: int
    thread: int
    op: str
    key: int
    inv: float
    res: float
    result: object  # None when the operation never responded
    optional: bool


@dataclass
class Verdict:
    ok: bool
    witness: list[int] | None = None  # operation ids in linearization order
    operations: list[Operation] = field(default_factory=list)
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def apply_set_op(state: frozenset, op: str, key) -> tuple[frozenset, bool]:
    if op == "insert":
        return (state, False) if key in state else (state | {key}, True)
    if op == "delete":
        return (state - {key}, True) if key in state else (state, False)
    if op == "find":
        return state, key in state
    raise HistoryError(f"unknown operation {op!r}")


def operations_from_history(events: list[HistoryEvent], *, allow_crash: bool = True) -> list[Operation]:
    """Pair invocations with responses; validate per-thread alternation."""
    open_ops: dict[int, tuple[int, HistoryEvent]] = {}
    ops: list[Operation] = []
    last_seq = -INF
    for pos, ev in enumerate(events):
        if ev.seq <= last_seq:
            raise HistoryError(f"event seq {ev.seq} is not increasing")
        last_seq = ev.seq
        if ev.kind == "CRASH":
            if not allow_crash:
                raise HistoryError("crash event in a crash-free history")
            for t, (p, iv) in sorted(open_ops.items()):
                ops.append(Operation(p, t, iv.op, iv.key, iv.seq, ev.seq, None, True))
            open_ops.clear()
        elif ev.kind == "INV":
            if ev.thread in open_ops:
                raise HistoryError(f"thread {ev.thread} invokes while an operation is open")
            open_ops[ev.thread] = (pos, ev)
        elif ev.kind == "RES":
            if ev.thread not in open_ops:
                raise HistoryError(f"thread {ev.thread} responds with no open operation")
            p, iv = open_ops.pop(ev.thread)
            if (iv.op, iv.key) != (ev.op, ev.key):
                raise HistoryError(f"response {ev.op}({ev.key}) does not match invocation {iv.op}({iv.key})")
            ops.append(Operation(p, ev.thread, iv.op, iv.key, iv.seq, ev.seq, ev.result, False))
        else:
            raise HistoryError(f"unknown event kind {ev.kind!r}")
    for t, (p, iv) in sorted(open_ops.items()):
        ops.append(Operation(p, t, iv.op, iv.key, iv.seq, INF, None, True))
    ops.sort(key=lambda o: o.inv)
    return [Operation(i, o.thread, o.op, o.key, o.inv, o.res, o.result, o.optional) for i, o in enumerate(ops)]


def _search(ops: list[Operation], initial: frozenset) -> list[int] | None:
    n = len(ops)
    mandatory = 0
    for o in ops:
        if not o.optional:
            mandatory |= 1 << o.id
    failed: set[tuple[int, frozenset]] = set()
    order: list[int] = []

    def dfs(done: int, state: frozenset) -> bool:
        if done & mandatory == mandatory:
            return True
        if (done, state) in failed:
            return False
        min_res = INF
        for o in ops:
            if not (done >> o.id) & 1 and not o.optional and o.res < min_res:
                min_res = o.res
        max_done_inv = -INF
        for o in ops:
            if (done >> o.id) & 1 and o.inv > max_done_inv:
                max_done_inv = o.inv
        for o in ops:
            if (done >> o.id) & 1 or o.inv >= min_res:
                continue
            if o.optional and o.res < max_done_inv:
                continue  # it would have to precede something already placed
            new_state, result = apply_set_op(state, o.op, o.key)
            if o.result is not None and result != o.result:
                continue
            order.append(o.id)
            if dfs(done | (1 << o.id), new_state):
                return True
            order.pop()
        failed.add((done, state))
        return False

    if n > 62:
        raise HistoryError("history too long for the exhaustive checker")
    return list(order) if dfs(0, initial) else None


def check_linearizability(events: list[HistoryEvent], initial=frozenset()) -> Verdict:
    """Linearizability of a crash-free history against ordered-set semantics."""
    ops = operations_from_history(events, allow_crash=False)
    witness = _search(ops, frozenset(initial))
    return Verdict(witness is not None, witness, ops, "" if witness is not None else "no linearization")


def check_durable_linearizability(events: list[HistoryEvent], initial=frozenset()) -> Verdict:
    """Linearizability after removing crashes; cut-off operations may or may not take effect."""
    ops = operations_from_history(events, allow_crash=True)
    witness = _search(ops, frozenset(initial))
    return Verdict(witness is not None, witness, ops, "" if witness is not None else "no durable linearization")


def brute_force_linearizable(events: list[HistoryEvent], initial=frozenset()) -> bool:
    """Try every subset of optional operations in every order."""
    ops = operations_from_history(events, allow_crash=True)
    required = [o for o in ops if not o.optional]
    optional = [o for o in ops if o.optional]
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            chosen = required + list(extra)
            for perm in itertools.permutations(chosen):
                if _valid_order(perm, initial):
                    return True
    return False


def _valid_order(perm, initial) -> bool:
    state = frozenset(initial)
    for i, a in enumerate(perm):
        for b in perm[i + 1 :]:
            if b.res < a.inv:  # b finished before a started but comes later
                return False
        state, result = apply_set_op(state, a.op, a.key)
        if a.result is not None and a.result != result:
            return False
    return True
