"""Small builders and enumerators shared by the test modules."""

from __future__ import annotations

import itertools
import random

from nvtraverse.execution import ControlledRun, run_sequential
from nvtraverse.framework import KEY, NEXT, is_marked, unmark, with_mark
from nvtraverse.pmem import PersistentMemory
from nvtraverse.structures import SETUP_THREAD, make_structure
from nvtraverse.verifier.history import HistoryEvent, crash, inv, renumber, res


def node_with_key(structure, mem: PersistentMemory, key: int, bucket: int | None = None) -> int:
    b = structure.bucket_of(key) if bucket is None else bucket
    for node in structure.chain(mem, b):
        if mem.peek(node + KEY) == key:
            return node
    raise KeyError(key)


def build(keys=(), marked=(), *, kind="list", buckets=2, trace=False, **mem_kwargs):
    """Persisted structure holding ``keys``, with the nodes of ``marked`` logically deleted."""
    mem = PersistentMemory(trace=trace, **mem_kwargs)
    s = make_structure(kind, mem, keys, buckets)
    for k in marked:
        node = node_with_key(s, mem, k)
        mem.write(node + NEXT, with_mark(mem.peek(node + NEXT)), SETUP_THREAD)
        mem.flush(node + NEXT, SETUP_THREAD)
    mem.fence(SETUP_THREAD)
    mem.reset_counters()
    if trace:
        mem.trace.clear()
    return mem, s


def chain_keys(structure, mem: PersistentMemory, bucket: int = 0) -> list[tuple[int, bool]]:
    """(key, marked) along a bucket, sentinels excluded."""
    nodes = structure.chain(mem, bucket)[1:-1]
    return [(mem.peek(n + KEY), is_marked(mem.peek(n + NEXT))) for n in nodes]


def run(mem, gen, thread=0, **kwargs):
    return run_sequential(mem, gen, thread, **kwargs)


def enumerate_runs(setup, limit: int = 200_000):
    """Every complete interleaving of the thread bodies built by ``setup()``.

    ``setup`` returns ``(mem, bodies, extra)``; each yielded item is
    ``(run, extra)`` for one finished schedule.  Prefixes are replayed
    from scratch, so bodies must be deterministic.
    """
    stack: list[list[int]] = [[]]
    count = 0
    while stack:
        prefix = stack.pop()
        mem, bodies, extra = setup()
        r = ControlledRun(mem, bodies)
        for t in prefix:
            r.step(t)
        if r.finished():
            count += 1
            if count > limit:
                raise RuntimeError("too many interleavings")
            yield r, extra
            continue
        for t in reversed(r.enabled()):
            stack.append(prefix + [t])


def reachable_sequence(structure, mem: PersistentMemory) -> list[int]:
    return [unmark(n) for b in range(len(structure.heads)) for n in structure.chain(mem, b)]


def phase_ops(trace, phase):
    """Op names (with the immutable/local tag) of every event inside ``phase``."""
    out, inside = [], False
    for ev in trace:
        if ev.op == "PH" and ev.arg1 == phase:
            inside = ev.arg2 == "begin"
            continue
        if inside:
            tag = ev.arg1 == "imm" if ev.op == "R" else ev.arg2 == "local" if ev.op == "W" else False
            out.append(ev.op + ("*" if tag else ""))
    return out


def legal_order_finals(keys, marked):
    """Final reachable sequences over every order of legal disconnection CASes."""
    finals = set()

    def go(mem, s, depth):
        moves = s.legal_disconnections(mem)
        if not moves:
            finals.add(tuple(reachable_sequence(s, mem)))
            return
        for addr, expected, new in moves:
            snap = mem.snapshot()
            assert mem.cas(addr, expected, new)
            go(mem, s, depth + 1)
            mem.restore(snap)

    mem, s = build(keys, marked)
    go(mem, s, 0)
    return finals


def oracle(events) -> bool:
    """Durable linearizability by exhaustive enumeration, written independently.

    An operation is an interval [inv, res] (res = crash position or end if it
    never responded).  Pending ones may be included or dropped.  An order is
    valid if it respects real time and ordered-set semantics.
    """
    open_, intervals = {}, []
    for pos, ev in enumerate(events):
        if ev.kind == "INV":
            open_[ev.thread] = (pos, ev)
        elif ev.kind == "RES":
            p, iv = open_.pop(ev.thread)
            intervals.append((p, pos, ev.op, ev.key, ev.result))
        else:
            intervals += [(p, pos, iv.op, iv.key, None) for p, iv in open_.values()]
            open_.clear()
    intervals += [(p, len(events), iv.op, iv.key, None) for p, iv in open_.values()]
    done = [i for i in intervals if i[4] is not None]
    pending = [i for i in intervals if i[4] is None]
    for mask in range(1 << len(pending)):
        chosen = done + [p for j, p in enumerate(pending) if mask >> j & 1]
        for order in itertools.permutations(chosen):
            if any(b[1] < a[0] for x, a in enumerate(order) for b in order[x + 1 :]):
                continue
            state, ok = set(), True
            for _, _, op, key, result in order:
                if op == "insert":
                    r = key not in state
                    state.add(key)
                elif op == "delete":
                    r = key in state
                    state.discard(key)
                else:
                    r = key in state
                if result is not None and r != result:
                    ok = False
                    break
            if ok:
                return True
    return False


def random_history(rng: random.Random, max_ops: int = 8) -> list[HistoryEvent]:
    """Well-formed random history: some operations stay pending, at most one crash."""
    n = rng.randint(1, max_ops)
    threads = rng.randint(1, 3)
    ops = [(rng.choice(["insert", "delete", "find"]), rng.randint(1, 3)) for _ in range(n)]
    events, open_, stuck, started = [], {}, set(), 0
    may_crash = rng.random() < 0.5
    while started < n or len(open_) > len(stuck):
        idle = [t for t in range(threads) if t not in open_]
        live = sorted(set(open_) - stuck)
        if may_crash and open_ and (not idle and not live or rng.random() < 0.08):
            events.append(crash(0))
            open_.clear()
            stuck.clear()
            may_crash = False
            continue
        if not idle and not live:
            break
        if started < n and idle and (not live or rng.random() < 0.5):
            t = rng.choice(idle)
            open_[t] = ops[started]
            events.append(inv(0, t, *ops[started]))
            started += 1
        elif rng.random() < 0.1:
            stuck.add(rng.choice(live))  # never responds
        else:
            t = rng.choice(live)
            op, key = open_.pop(t)
            events.append(res(0, t, op, key, rng.random() < 0.5))
    return renumber(events)
