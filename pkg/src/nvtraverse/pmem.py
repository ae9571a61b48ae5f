"""Two-level (volatile / persistent) word-addressed memory simulator.

Every access hits the volatile value of a word.  A value reaches the
persistent level only when the writing thread flushes the word and then
fences, or when the eviction policy writes it back on its own.  A crash
throws the volatile level away and resolves every pending word to one of
its legal persisted values.

The simulator has two modes.  In controlled mode a single driver steps
logical threads and may snapshot/restore the whole state.  In
free-threading mode (``threadsafe=True``) every instruction runs under one
lock, so real threads can share it.
"""

from __future__ import annotations

import contextlib
import itertools
import random
import threading
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field, fields
from typing import Any, NamedTuple

from nvtraverse import isa

__all__ = [
    "Counters",
    "CrashOutcome",
    "EvictionPolicy",
    "MemoryImage",
    "MemorySnapshot",
    "PersistentMemory",
    "PersistentWord",
    "TraceEvent",
    "format_trace",
    "parse_trace",
]


class TraceEvent(NamedTuple):
    seq: int
    thread: int
    op: str
    addr: Any
    arg1: Any = "-"
    arg2: Any = "-"
    result: Any = "-"

    def line(self) -> str:
        return "\t".join(str(x) for x in self)


def format_trace(events) -> str:
    return "".join(ev.line() + "\n" for ev in events)


def _field(text: str):
    if text == "-":
        return text
    try:
        return int(text)
    except ValueError:
        return text


def parse_trace(text: str) -> list[TraceEvent]:
    events = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ValueError(f"malformed trace line: {line!r}")
        seq, thread, op, *rest = parts
        events.append(TraceEvent(int(seq), int(thread), op, *(_field(p) for p in rest)))
    return events


@dataclass
class Counters:
    reads: int = 0
    writes: int = 0
    cas: int = 0
    cas_failures: int = 0
    flushes: int = 0
    fences: int = 0
    evictions: int = 0

    def __add__(self, other: Counters) -> Counters:
        return Counters(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __sub__(self, other: Counters) -> Counters:
        return Counters(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def copy(self) -> Counters:
        return Counters(*(getattr(self, f.name) for f in fields(self)))

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class EvictionPolicy:
    """How the simulated cache writes words back without being asked.

    ``none``: only flush+fence persists.  ``random``: after every
    modification the word is evicted with probability ``p``.
    ``adversarial``: any write may have been evicted at any time, so a
    crash may leave any value written since the last guaranteed persist.
    """

    kind: str = "none"
    p: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "random", "adversarial"):
            raise ValueError(f"unknown eviction policy {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("eviction probability must be in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> EvictionPolicy:
        """``none``, ``adversarial`` or ``random:<p>``."""
        if text.startswith("random"):
            _, _, p = text.partition(":")
            return cls("random", float(p or 0.5))
        return cls(text)


@dataclass(frozen=True)
class PersistentWord:
    address: int
    volatile_value: int
    persisted_value: int
    flushed_unfenced: frozenset[int]

    @property
    def pending(self) -> bool:
        return self.volatile_value != self.persisted_value


class MemoryImage(dict):
    """Post-crash persistent contents: word-id -> value (absent means 0)."""

    def key(self) -> tuple:
        return tuple(sorted((a, v) for a, v in self.items() if v))


@dataclass
class CrashOutcome:
    image: MemoryImage
    # word-id -> index into the word's crash options (0 = kept-persisted)
    choices: dict[int, int] = field(default_factory=dict)

    @property
    def resolution(self) -> dict[int, str]:
        return {a: ("kept-persisted" if i == 0 else "promoted-pending") for a, i in self.choices.items()}


@dataclass(frozen=True)
class MemorySnapshot:
    words: dict
    flushed: tuple

    def key(self) -> tuple:
        return (frozenset(self.words.items()), self.flushed)


class PersistentMemory:
    """Word-granular persistent memory with per-thread flush/fence semantics.

    Word state is ``addr -> (volatile, persisted, history)``.  ``history``
    holds the values written since the last persist and is only tracked
    under the adversarial eviction policy.

    ``stale_flush`` decides what a fence does with a flush whose word was
    overwritten before the fence: ``"invalidate"`` persists nothing,
    ``"persist-flushed"`` persists the value the flush saw.
    """

    def __init__(
        self,
        eviction: EvictionPolicy | str = "none",
        *,
        line_words: int = 1,
        threadsafe: bool = False,
        trace: bool = False,
        stale_flush: str = "invalidate",
    ):
        if isinstance(eviction, str):
            eviction = EvictionPolicy.parse(eviction)
        if line_words < 1:
            raise ValueError("line_words must be positive")
        if stale_flush not in ("invalidate", "persist-flushed"):
            raise ValueError("stale_flush must be 'invalidate' or 'persist-flushed'")
        self.eviction = eviction
        self.line_words = line_words
        self.stale_flush = stale_flush
        self.threadsafe = threadsafe
        self._track_history = eviction.kind == "adversarial"
        self._rng = random.Random(eviction.seed)
        self._words: dict[int, tuple] = {}
        # thread -> {addr: value seen by the flush}
        self._flushed: dict[int, dict[int, int]] = {}
        self._counters: dict[int, Counters] = {}
        self._lock = threading.Lock() if threadsafe else contextlib.nullcontext()
        self.tracing = trace
        self.trace: list[TraceEvent] = []
        self._seq = 0

    def config(self) -> dict:
        return {
            "eviction": self.eviction,
            "line_words": self.line_words,
            "stale_flush": self.stale_flush,
        }

    # -- inspection -------------------------------------------------------

    def word(self, addr: int) -> PersistentWord:
        vol, pers, _ = self._words.get(addr, (0, 0, ()))
        flushers = frozenset(t for t, s in self._flushed.items() if addr in s)
        return PersistentWord(addr, vol, pers, flushers)

    def peek(self, addr: int) -> int:
        """Volatile value without counting a read (for dumps and checks)."""
        w = self._words.get(addr)
        return w[0] if w else 0

    def persisted(self, addr: int) -> int:
        w = self._words.get(addr)
        return w[1] if w else 0

    def pending_words(self) -> list[int]:
        return sorted(a for a, w in self._words.items() if w[0] != w[1])

    def flushed_by(self, thread: int) -> set[int]:
        """Words ``thread`` flushed since its last fence (still covered)."""
        return set(self._flushed.get(thread, ()))

    def addresses(self) -> list[int]:
        return sorted(self._words)

    def counters(self, thread: int | None = None) -> Counters:
        if thread is None:
            total = Counters()
            for c in self._counters.values():
                total = total + c
            return total
        c = self._counters.get(thread)
        return c.copy() if c else Counters()

    def per_thread_counters(self) -> dict[int, Counters]:
        return {t: c.copy() for t, c in self._counters.items()}

    def reset_counters(self) -> None:
        self._counters.clear()

    def _ctr(self, thread: int) -> Counters:
        c = self._counters.get(thread)
        if c is None:
            c = self._counters[thread] = Counters()
        return c

    def _log(self, thread, op, addr, arg1="-", arg2="-", result="-"):
        self.trace.append(TraceEvent(self._seq, thread, op, addr, arg1, arg2, result))
        self._seq += 1

    def log_phase(self, thread: int, phase: str, edge: str) -> None:
        if self.tracing:
            with self._lock:
                self._log(thread, "PH", "-", phase, edge)

    # -- instructions -------------------------------------------------------

    def read(self, addr: int, thread: int = 0, *, immutable: bool = False) -> int:
        with self._lock:
            w = self._words.get(addr)
            value = w[0] if w else 0
            self._ctr(thread).reads += 1
            if self.tracing:
                self._log(thread, "R", addr, "imm" if immutable else "-", "-", value)
            return value

    def _store(self, addr: int, value: int) -> None:
        w = self._words.get(addr)
        if w is None:
            pers, hist = 0, ()
        else:
            pers, hist = w[1], w[2]
        if self._track_history:
            # keep each value once, ordered by its latest write
            hist = tuple(v for v in hist if v != value) + (value,)
        self._words[addr] = (value, pers, hist)
        if self.stale_flush == "invalidate":
            for s in self._flushed.values():
                s.pop(addr, None)
        if self.eviction.kind == "random" and self._rng.random() < self.eviction.p:
            self._words[addr] = (value, value, ())

    def write(self, addr: int, value: int, thread: int = 0, *, local: bool = False) -> None:
        with self._lock:
            self._ctr(thread).writes += 1
            self._store(addr, value)
            if self.tracing:
                self._log(thread, "W", addr, value, "local" if local else "-")

    def cas(self, addr: int, expected: int, new: int, thread: int = 0) -> bool:
        with self._lock:
            c = self._ctr(thread)
            c.cas += 1
            w = self._words.get(addr)
            ok = (w[0] if w else 0) == expected
            if ok:
                self._store(addr, new)
            else:
                c.cas_failures += 1
            if self.tracing:
                self._log(thread, "CAS", addr, expected, new, int(ok))
            return ok

    def flush(self, addr: int, thread: int = 0) -> None:
        with self._lock:
            self._ctr(thread).flushes += 1
            s = self._flushed.get(thread)
            if s is None:
                s = self._flushed[thread] = {}
            words = self._words
            if self.line_words == 1:
                targets = (addr,)
            else:
                base = addr - addr % self.line_words
                targets = range(base, base + self.line_words)
            for a in targets:
                w = words.get(a)
                if self.stale_flush == "invalidate" and (w is None or w[0] == w[1]):
                    # nothing to persist, and any later write would void the flush anyway
                    s.pop(a, None)
                    continue
                s[a] = w[0]
            if self.tracing:
                self._log(thread, "FL", addr)

    def fence(self, thread: int = 0) -> None:
        with self._lock:
            self._ctr(thread).fences += 1
            s = self._flushed.get(thread)
            if s:
                words = self._words
                for addr, seen in s.items():
                    w = words.get(addr)
                    if w is None or w[0] == w[1]:
                        continue
                    if w[0] == seen:
                        words[addr] = (seen, seen, ())
                    elif self.stale_flush == "persist-flushed":
                        hist = w[2]
                        if seen in hist:
                            hist = hist[len(hist) - hist[::-1].index(seen):]
                        words[addr] = (w[0], seen, hist)
                s.clear()
            if self.tracing:
                self._log(thread, "FE", "-")

    def simulate_eviction(self, addr: int, thread: int = -1) -> None:
        if self.eviction.kind == "none":
            raise RuntimeError("eviction is disabled under policy 'none'")
        with self._lock:
            self._ctr(thread).evictions += 1
            w = self._words.get(addr)
            if w is not None:
                self._words[addr] = (w[0], w[0], ())
            if self.tracing:
                self._log(thread, "EV", addr)

    def execute(self, instr, thread: int):
        """Run one shared-memory instruction from :mod:`nvtraverse.isa`."""
        return _DISPATCH[type(instr)](self, instr, thread)

    # -- crashes ------------------------------------------------------------

    def crash_options(self) -> dict[int, tuple[int, ...]]:
        """Legal post-crash values of every pending word, persisted value first."""
        opts = {}
        for addr, (vol, pers, hist) in self._words.items():
            if vol == pers:
                continue
            if hist:
                seen = [pers]
                for v in hist:
                    if v not in seen:
                        seen.append(v)
                opts[addr] = tuple(seen)
            else:
                opts[addr] = (pers, vol)
        return opts

    def _base_image(self) -> MemoryImage:
        return MemoryImage((a, w[1]) for a, w in self._words.items())

    def crash(self, selector: Any = None, thread: int = -1) -> CrashOutcome:
        """Resolve every pending word and return the surviving image.

        ``selector`` may be ``None``/``"drop"`` (keep persisted values),
        ``"promote"`` (keep the newest volatile value), a ``random.Random``,
        a mapping word-id -> option index (replay), or a callable
        ``(addr, options) -> index`` acting as an adversary.
        """
        with self._lock:
            opts = self.crash_options()
            image = self._base_image()
            choices = {}
            for addr in sorted(opts):
                options = opts[addr]
                if selector is None or selector == "drop":
                    i = 0
                elif selector == "promote":
                    i = len(options) - 1
                elif isinstance(selector, random.Random):
                    i = selector.randrange(len(options))
                elif isinstance(selector, Mapping):
                    i = selector.get(addr, 0)
                elif callable(selector):
                    i = selector(addr, options)
                else:
                    raise TypeError(f"unsupported crash selector {selector!r}")
                choices[addr] = i
                image[addr] = options[i]
            if self.tracing:
                self._log(thread, "CR", "-", len(opts))
            return CrashOutcome(image, choices)

    def crash_images(self) -> Iterator[CrashOutcome]:
        """Every legal crash outcome (product over pending words)."""
        opts = self.crash_options()
        base = self._base_image()
        addrs = sorted(opts)
        for idx in itertools.product(*(range(len(opts[a])) for a in addrs)):
            image = MemoryImage(base)
            for a, i in zip(addrs, idx):
                image[a] = opts[a][i]
            yield CrashOutcome(image, dict(zip(addrs, idx)))

    def crash_count(self) -> int:
        n = 1
        for o in self.crash_options().values():
            n *= len(o)
        return n

    @classmethod
    def from_image(cls, image: Mapping[int, int], **kwargs) -> PersistentMemory:
        """Fresh memory whose volatile and persistent levels both hold ``image``."""
        mem = cls(**kwargs)
        mem._words = {a: (v, v, ()) for a, v in image.items() if v}
        return mem

    # -- controlled-mode state ----------------------------------------------

    def snapshot(self) -> MemorySnapshot:
        flushed = tuple(sorted((t, frozenset(s.items())) for t, s in self._flushed.items() if s))
        return MemorySnapshot(dict(self._words), flushed)

    def restore(self, snap: MemorySnapshot) -> None:
        self._words = dict(snap.words)
        self._flushed = {t: dict(s) for t, s in snap.flushed}

    def state_key(self) -> tuple:
        """Hashable identity of the simulated state (counters excluded)."""
        flushed = tuple(sorted((t, frozenset(s.items())) for t, s in self._flushed.items() if s))
        return (frozenset(self._words.items()), flushed)

    def execute_undoable(self, instr, thread: int):
        """Execute ``instr``; return (result, token) where ``undo(token)`` reverts it."""
        kind = type(instr)
        if kind is isa.Read:
            addrs: Iterable[int] = ()
        elif kind is isa.Fence:
            addrs = tuple(self._flushed.get(thread, ()))
        elif kind is isa.Flush and self.line_words > 1:
            base = instr.addr - instr.addr % self.line_words
            addrs = range(base, base + self.line_words)
        else:
            addrs = (instr.addr,)
        words = self._words
        saved = tuple((a, words.get(a)) for a in addrs)
        flushed = {t: dict(s) for t, s in self._flushed.items() if s}
        return _DISPATCH[kind](self, instr, thread), (saved, flushed)

    def undo(self, token) -> None:
        saved, flushed = token
        words = self._words
        for a, w in saved:
            if w is None:
                words.pop(a, None)
            else:
                words[a] = w
        self._flushed = flushed


_DISPATCH: dict[type, Callable] = {
    isa.Read: lambda m, i, t: m.read(i.addr, t, immutable=i.immutable),
    isa.Write: lambda m, i, t: m.write(i.addr, i.value, t, local=i.local),
    isa.Cas: lambda m, i, t: m.cas(i.addr, i.expected, i.new, t),
    isa.Flush: lambda m, i, t: m.flush(i.addr, t),
    isa.Fence: lambda m, i, t: m.fence(t),
}
