"""Schedule-and-crash exploration of small concurrent executions.

Each logical thread runs a short program of set operations against a
durable structure.  The explorer enumerates interleavings one shared
instruction at a time.  At every reached state it crashes the memory
under every legal resolution, runs recovery on the surviving image,
probes the key range with ``find`` and asks the checker whether the
resulting history is durably linearizable.

Threads are deterministic functions of the results their shared
instructions return, so a thread's local state is identified by that
result sequence.  Sequences are kept in a per-thread trie and states are
cached on (memory, trie nodes, history), which collapses interleavings
that reach the same configuration.  A generator cannot be copied, so a
trie node keeps at most one live generator; other children are reached
by replaying the thread from scratch.

Counterexamples record the program, schedule and crash choices; they
replay through :class:`~nvtraverse.execution.ControlledRun`.
"""

from __future__ import annotations

import itertools
import json
import random
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

from nvtraverse.baselines import strategy_for
from nvtraverse.execution import ControlledRun, run_sequential, thread_body
from nvtraverse.framework import OPS, Allocator, ContractViolation, run_operation, run_recovery
from nvtraverse.injector import PersistencePolicy
from nvtraverse.isa import SHARED, Alloc, Cas, Fence, Flush, Invoke, Read, Respond, Write
from nvtraverse.pmem import MemoryImage, PersistentMemory
from nvtraverse.structures import make_structure
from nvtraverse.verifier.checker import check_durable_linearizability, check_linearizability
from nvtraverse.verifier.history import HistoryEvent, format_history

RECOVERY_THREAD = 98
PROBE_THREAD = 99
STEP_LIMIT = 20_000


@dataclass(frozen=True)
class ExplorationConfig:
    structure: str = "list"
    persist: str = "nvtraverse"
    policy: PersistencePolicy = PersistencePolicy()
    keys: tuple[int, ...] = (1, 2)
    threads: int = 2
    ops_per_thread: int = 2
    buckets: int = 2
    initial: tuple[int, ...] = ()
    eviction: str = "none"
    stale_flush: str = "invalidate"
    programs: tuple | None = None  # explicit ((thread0 ops), (thread1 ops), ...) tuples
    check_invariants: bool = True
    reduce: bool = True  # skip branching on steps invisible to other threads
    # "serial" recovers before probing; "interleaved:n" runs the probes
    # concurrently with recovery under n seeded random schedules per image
    recovery: str = "serial"

    def __post_init__(self):
        if self.eviction.split(":")[0] not in ("none", "adversarial"):
            raise ValueError("exploration needs a deterministic eviction policy: 'none' or 'adversarial'")
        head, _, n = self.recovery.partition(":")
        if not (self.recovery == "serial" or head == "interleaved" and n.isdigit() and int(n) > 0):
            raise ValueError(f"bad recovery mode {self.recovery!r}; use 'serial' or 'interleaved:n'")

    def memory(self) -> PersistentMemory:
        return PersistentMemory(self.eviction, stale_flush=self.stale_flush)

    def build(self):
        mem = self.memory()
        structure = make_structure(self.structure, mem, self.initial, self.buckets)
        return mem, structure

    def strategy(self):
        return strategy_for(self.persist, self.policy)

    def operations(self) -> list[tuple[str, int]]:
        return [(op, k) for op in OPS for k in self.keys]

    def all_programs(self) -> list[tuple]:
        """Every assignment of programs to threads, up to renaming threads."""
        if self.programs is not None:
            return [tuple(tuple(map(tuple, p)) for p in prog) for prog in self.programs]
        per_thread = list(itertools.product(self.operations(), repeat=self.ops_per_thread))
        return list(itertools.combinations_with_replacement(per_thread, self.threads))


@dataclass
class ExplorationBudget:
    crash_points: str = "each-step"  # none | each-step | sampled:n (each state with probability 1/n)
    resolutions: str = "exhaustive"  # exhaustive | sampled:n
    max_states: int | None = None
    seed: int = 0
    stop_at_first: bool = True
    # "any" counts recovery errors and broken invariants as counterexamples;
    # "history" only counts histories the checker rejects
    accept: str = "any"

    def __post_init__(self):
        for name in ("crash_points", "resolutions"):
            value = getattr(self, name)
            head, _, n = value.partition(":")
            allowed = ("none", "each-step", "sampled") if name == "crash_points" else ("exhaustive", "sampled")
            if head not in allowed or (head == "sampled") != bool(n) or (n and not n.isdigit()):
                raise ValueError(f"bad {name} {value!r}")
        if self.accept not in ("any", "history"):
            raise ValueError(f"bad accept {self.accept!r}")

    @classmethod
    def parse(cls, text: str) -> ExplorationBudget:
        """``key=value`` pairs separated by commas, e.g. ``crash_points=none,max_states=1000``."""
        kwargs: dict = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            name, _, value = part.partition("=")
            if name in ("max_states", "seed"):
                kwargs[name] = int(value)
            elif name == "stop_at_first":
                kwargs[name] = value.lower() in ("1", "true", "yes")
            elif name in ("crash_points", "resolutions", "accept"):
                kwargs[name] = value
            else:
                raise ValueError(f"unknown budget field {name!r}")
        return cls(**kwargs)

    def _sampled(self, value: str) -> int | None:
        head, _, n = value.partition(":")
        return int(n) if head == "sampled" else None


@dataclass
class Counterexample:
    config: ExplorationConfig
    program: tuple
    schedule: list[int]
    crash_choices: dict[int, int] | None
    history: list[HistoryEvent]
    reason: str

    def write(self, directory: str | Path) -> Path:
        """history.txt, schedule.txt and resolution.txt under ``directory``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.txt").write_text(format_history(self.history))
        (out / "schedule.txt").write_text(" ".join(map(str, self.schedule)) + "\n")
        meta = {
            "reason": self.reason,
            "program": [[list(op) for op in p] for p in self.program],
            "crash": self.crash_choices is not None,
            "choices": {str(a): i for a, i in sorted((self.crash_choices or {}).items())},
            "config": _config_dict(self.config),
        }
        (out / "resolution.txt").write_text(json.dumps(meta, indent=2) + "\n")
        return out


def _config_dict(cfg: ExplorationConfig) -> dict:
    d = asdict(cfg)
    d["programs"] = None
    return d


@dataclass
class ExplorationStats:
    programs: int = 0
    states: int = 0
    transitions: int = 0
    crash_states: int = 0
    crash_images: int = 0
    recoveries: int = 0
    histories_checked: int = 0
    terminal_histories: int = 0
    other_failures: int = 0  # failures not counted under accept="history"
    elapsed: float = 0.0
    complete: bool = True


@dataclass
class ExplorationResult:
    ok: bool
    counterexample: Counterexample | None
    stats: ExplorationStats
    counterexamples: list[Counterexample] = field(default_factory=list)
    # program -> set of canonical complete histories reached (see ``visit``)
    outcomes: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if not self.ok:
            return "FAIL"
        return "PASS" if self.stats.complete else "PARTIAL"


# -- crash checking shared by the explorer, the sampler and replay ---------


class CrashChecker:
    """Recovery + probes on crash images, memoised by image and history."""

    def __init__(self, config: ExplorationConfig, structure):
        self.config = config
        self.structure = structure
        self.strategy = config.strategy()
        self.probe_cache: dict = {}
        self.verdict_cache: dict = {}
        self.stats = ExplorationStats()

    def probe(self, image: MemoryImage):
        """Distinct find-result vectors observable after recovery, or an error string."""
        key = image.key()
        hit = self.probe_cache.get(key)
        if hit is not None:
            return hit
        self.stats.recoveries += 1
        try:
            if self.config.recovery == "serial":
                mem = PersistentMemory.from_image(image, stale_flush=self.config.stale_flush)
                _bounded(mem, run_recovery(self.structure, self.strategy), RECOVERY_THREAD)
                results = (
                    tuple(
                        bool(_bounded(mem, run_operation(self.structure, "find", k, self.strategy), PROBE_THREAD))
                        for k in self.config.keys
                    ),
                )
            else:
                results = self._interleaved_probes(image)
        except (ContractViolation, _StepLimit, LookupError, ValueError) as exc:
            results = f"recovery failed: {type(exc).__name__}: {exc}"
        self.probe_cache[key] = results
        return results

    def _interleaved_probes(self, image: MemoryImage) -> tuple:
        n = int(self.config.recovery.partition(":")[2])
        # seeded by the image so replays see the same schedules
        rng = random.Random(zlib.crc32(repr(image.key()).encode()))
        probes = [("find", k) for k in self.config.keys]
        seen = set()
        for _ in range(n):
            mem = PersistentMemory.from_image(image, stale_flush=self.config.stale_flush)
            bodies = {
                RECOVERY_THREAD: run_recovery(self.structure, self.strategy),
                PROBE_THREAD: thread_body(self.structure, probes, self.strategy),
            }
            run = ControlledRun(mem, bodies, guard=_step_guard())
            run.run(rng.choice)
            seen.add(tuple(bool(e.result) for e in run.history if e.kind == "RES"))
        return tuple(sorted(seen))

    def history_with_probes(self, history, probes) -> list[HistoryEvent]:
        events = [HistoryEvent(i, *ev) for i, ev in enumerate(history)]
        seq = len(events)
        events.append(HistoryEvent(seq, None, "CRASH"))
        for k, r in zip(self.config.keys, probes):
            events.append(HistoryEvent(seq + 1, PROBE_THREAD, "INV", "find", k))
            events.append(HistoryEvent(seq + 2, PROBE_THREAD, "RES", "find", k, r))
            seq += 2
        return events

    def check(self, history: tuple, image: MemoryImage) -> str | None:
        """None when the crash is survivable, else a reason."""
        probes = self.probe(image)
        if isinstance(probes, str):
            return probes
        for vector in probes:
            reason = self.check_vector(history, vector)
            if reason:
                return reason
        return None

    def check_vector(self, history: tuple, vector: tuple) -> str | None:
        vk = (history, vector)
        hit = self.verdict_cache.get(vk)
        if hit is None:
            self.stats.histories_checked += 1
            v = check_durable_linearizability(
                self.history_with_probes(history, vector), initial=frozenset(self.config.initial)
            )
            hit = self.verdict_cache[vk] = "" if v.ok else _describe(history, vector, self.config)
        return hit or None


def _describe(history, probes, config) -> str:
    done_inserts = {ev[3] for ev in history if ev[1] == "RES" and ev[2] == "insert" and ev[4] is True}
    present = {k for k, r in zip(config.keys, probes) if r}
    lost = sorted(done_inserts - present)
    if lost:
        return f"not durably linearizable: completed insert of {lost} absent after recovery"
    return "not durably linearizable"


class _StepLimit(RuntimeError):
    pass


def _step_guard():
    steps = [0]

    def guard(_mem, _instr, _t):
        steps[0] += 1
        if steps[0] > STEP_LIMIT:
            raise _StepLimit(f"no progress after {STEP_LIMIT} shared instructions")

    return guard


def _bounded(mem, gen, thread):
    return run_sequential(mem, gen, thread, allocator=Allocator(thread), guard=_step_guard())


def _resolutions(mem: PersistentMemory, budget: ExplorationBudget, rng: random.Random):
    n = budget._sampled(budget.resolutions)
    if n is None:
        yield from mem.crash_images()
        return
    total = mem.crash_count()
    if total <= n:
        yield from mem.crash_images()
        return
    for _ in range(n):
        yield mem.crash(rng)


# -- per-thread tries ---------------------------------------------------------


class _Node:
    __slots__ = ("id", "path", "instr", "inv", "children", "gen", "alloc", "local")

    def __init__(self, id_, path, instr, inv, gen, alloc, local=frozenset()):
        self.id = id_
        self.local = local  # words of nodes this thread initialised but has not published
        self.path = path
        self.instr = instr  # next shared instruction, None once finished
        self.inv = inv  # (op, key) to announce when ``instr`` executes
        self.children: dict = {}
        self.gen = gen
        self.alloc = alloc


def _pump(gen, alloc, result):
    """Advance to the next shared instruction: (instr, held invoke, responses)."""
    held = None
    responses = []
    try:
        while True:
            instr = gen.send(result)
            if isinstance(instr, SHARED):
                return instr, held, responses
            result = None
            if isinstance(instr, Alloc):
                result = alloc.alloc(instr.words)
            elif isinstance(instr, Invoke):
                held = (instr.op, instr.key)
            elif isinstance(instr, Respond):
                responses.append((instr.op, instr.key, instr.result))
    except StopIteration:
        return None, held, responses


class _Trie:
    def __init__(self, thread: int, make_gen, counter):
        self.thread = thread
        self.make_gen = make_gen
        self.counter = counter
        gen, alloc = make_gen(), Allocator(thread)
        instr, held, _ = _pump(gen, alloc, None)
        self.root = self._new((), instr, held, gen, alloc)

    def _new(self, path, instr, held, gen, alloc, local=frozenset()):
        self.counter[0] += 1
        return _Node(self.counter[0], path, instr, held, gen if instr is not None else None, alloc, local)

    def child(self, node: _Node, result):
        hit = node.children.get(result)
        if hit is not None:
            return hit
        if node.gen is not None:
            gen, alloc = node.gen, node.alloc
            node.gen = None
        else:
            gen, alloc = self.make_gen(), Allocator(self.thread)
            _pump(gen, alloc, None)
            for r in node.path:
                _pump(gen, alloc, r)
        instr, held, responses = _pump(gen, alloc, result)
        done = node.instr
        if type(done) is Write and done.local:
            local = node.local | {done.addr}
        elif type(done) in (Write, Cas):
            local = frozenset()  # the node may be published now
        else:
            local = node.local
        child = self._new(node.path + (result,), instr, held, gen, alloc, local)
        node.children[result] = hit = (child, tuple(responses))
        return hit


# -- exhaustive exploration ---------------------------------------------------


def explore(config: ExplorationConfig | None = None, budget: ExplorationBudget | None = None) -> ExplorationResult:
    """Explore every program of ``config`` within ``budget``."""
    config = config or ExplorationConfig()
    budget = budget or ExplorationBudget()
    start = time.perf_counter()
    stats = ExplorationStats()
    result = ExplorationResult(True, None, stats)
    rng = random.Random(budget.seed)
    mem0, structure = config.build()
    checker = CrashChecker(config, structure)
    strategy = checker.strategy
    snap0 = mem0.snapshot()
    for program in config.all_programs():
        stats.programs += 1
        found = _explore_program(config, budget, program, structure, strategy, snap0, checker, rng, result)
        if found and budget.stop_at_first:
            break
        if not stats.complete:
            break
    stats.crash_images = checker.stats.crash_images
    stats.recoveries = checker.stats.recoveries
    stats.histories_checked = checker.stats.histories_checked
    stats.elapsed = time.perf_counter() - start
    return result


def _explore_program(config, budget, program, structure, strategy, snap0, checker, rng, result) -> bool:
    stats = result.stats
    mem = config.memory()
    mem.restore(snap0)
    counter = [0]
    tries = [
        _Trie(t, (lambda p=p: thread_body(structure, p, strategy)), counter) for t, p in enumerate(program)
    ]
    crash_n = budget._sampled(budget.crash_points)
    crash_every = budget.crash_points == "each-step"
    terminals = result.outcomes.setdefault(program, set())
    seen: set = set()
    invariant_ok: set = set()
    crash_ok: set = set()
    schedule: list[int] = []
    failures: list[Counterexample] = []

    def fail(reason, choices):
        if budget.accept == "history" and not reason.startswith("not "):
            stats.other_failures += 1
            return False
        cx = Counterexample(config, program, list(schedule), choices, [], reason)
        cx.history = replay(cx).history
        failures.append(cx)
        result.counterexamples.append(cx)
        if result.counterexample is None:
            result.counterexample = cx
        result.ok = False

    def visit(nodes, history, canon, done) -> bool:
        """Depth-first from the current memory state; True to stop.

        ``canon`` abstracts the history to what linearizability depends on:
        each operation, its result, and for each invocation how many
        operations of every thread had already responded.  Histories with
        equal ``canon`` accept exactly the same extensions.
        """
        key = (mem.state_key(), tuple(n.id for n in nodes), canon)
        if key in seen:
            return False
        if budget.max_states is not None and stats.states >= budget.max_states:
            stats.complete = False
            return True
        seen.add(key)
        stats.states += 1

        # crash outcomes and the invariant depend only on the words, not on
        # pending flushes or thread positions
        words = key[0][0]
        if config.check_invariants and words not in invariant_ok:
            if not structure.sorted_invariant(mem):
                if fail("sorted-chain invariant broken", None) is not False:
                    return budget.stop_at_first
            invariant_ok.add(words)
        crash_here = crash_every or (crash_n is not None and rng.random() < 1 / crash_n)
        if crash_here and (words, canon) not in crash_ok:
            stats.crash_states += 1
            clean = True
            for outcome in _resolutions(mem, budget, rng):
                checker.stats.crash_images += 1
                reason = checker.check(history, outcome.image)
                if reason:
                    clean = False
                    if fail(reason, outcome.choices) is False:
                        continue
                    if budget.stop_at_first:
                        return True
                    break
            if clean and crash_n is None and budget._sampled(budget.resolutions) is None:
                crash_ok.add((words, canon))

        enabled = [t for t, n in enumerate(nodes) if n.instr is not None]
        if not enabled:
            stats.terminal_histories += canon not in terminals
            terminals.add(canon)
            if crash_n is None and not crash_every:
                events = [HistoryEvent(i, *ev) for i, ev in enumerate(history)]
                if not check_linearizability(events, initial=frozenset(config.initial)):
                    fail("not linearizable", None)
                    if budget.stop_at_first:
                        return True
            return False
        forced = _local_step(nodes, enabled, mem) if config.reduce else None
        if forced is not None:
            enabled.remove(forced)
            enabled.insert(0, forced)
        for t in enabled:
            node = nodes[t]
            events = []
            new_canon = canon
            new_done = done
            if node.inv is not None:
                events.append((t, "INV", node.inv[0], node.inv[1], None))
                new_canon = canon | {("INV", t, done[t], node.inv, done)}
            r, token = mem.execute_undoable(node.instr, t)
            child, responses = tries[t].child(node, r)
            for op, k, res in responses:
                events.append((t, "RES", op, k, res))
                new_canon = new_canon | {("RES", t, new_done[t], res)}
                new_done = new_done[:t] + (new_done[t] + 1,) + new_done[t + 1 :]
            stats.transitions += 1
            schedule.append(t)
            stop = visit(nodes[:t] + (child,) + nodes[t + 1 :], history + tuple(events), new_canon, new_done)
            schedule.pop()
            mem.undo(token)
            if stop:
                return True
            if t == forced and not responses:
                break  # every other order reaches an equivalent state through this one
        return False

    visit(tuple(tr.root for tr in tries), (), frozenset(), (0,) * len(tries))
    return bool(failures)


def _local_step(nodes, enabled, mem) -> int | None:
    """A thread whose next step commutes with every other thread and changes
    nothing a crash check can observe, or None.

    Such steps are: reads of immutable fields, writes initialising a node the
    thread has not published yet, flushes of those words, and fences that
    only cover them (or nothing).  Exploring that step alone from this state
    loses no reachable (memory, history) pair.
    """
    for t in enabled:
        node = nodes[t]
        if node.inv is not None:
            continue  # announcing an operation is visible in the history
        instr = node.instr
        kind = type(instr)
        if kind is Read:
            if instr.immutable:
                return t
        elif kind is Write:
            if instr.local:
                return t
        elif kind is Flush:
            if instr.addr in node.local:
                return t
        elif kind is Fence:
            if mem.flushed_by(t) <= node.local:
                return t
    return None


# -- replay and random sampling -----------------------------------------------


@dataclass
class ReplayOutcome:
    history: list[HistoryEvent]
    reason: str | None

    @property
    def failed(self) -> bool:
        return self.reason is not None


def _run_to_crash(config, structure, mem, program, schedule, strategy):
    # on a freshly built memory every thread allocates from its arena base, as in the explorer
    run = ControlledRun(mem, {t: thread_body(structure, p, strategy) for t, p in enumerate(program)})
    for t in schedule:
        run.step(t)
    return run


def replay(cx: Counterexample) -> ReplayOutcome:
    """Re-execute a counterexample and re-check it from scratch."""
    config = cx.config
    mem, structure = config.build()
    strategy = config.strategy()
    run = _run_to_crash(config, structure, mem, cx.program, cx.schedule, strategy)
    history = tuple((e.thread, e.kind, e.op, e.key, e.result) for e in run.history)
    checker = CrashChecker(config, structure)
    if cx.crash_choices is None:
        events = [HistoryEvent(i, *ev) for i, ev in enumerate(history)]
        if config.check_invariants and not structure.sorted_invariant(mem):
            return ReplayOutcome(events, "sorted-chain invariant broken")
        if run.finished() and not check_linearizability(events, initial=frozenset(config.initial)):
            return ReplayOutcome(events, "not linearizable")
        return ReplayOutcome(events, None)
    outcome = mem.crash(cx.crash_choices)
    reason = checker.check(history, outcome.image)
    probes = checker.probe(outcome.image)
    if isinstance(probes, str):
        events = [HistoryEvent(i, *ev) for i, ev in enumerate(history)]
        events.append(HistoryEvent(len(events), None, "CRASH"))
        return ReplayOutcome(events, reason)
    # the first failing vector, or any one when the crash is survivable
    vector = next((v for v in probes if checker.check_vector(history, v)), probes[0])
    return ReplayOutcome(checker.history_with_probes(history, vector), reason)


@dataclass
class SampleResult:
    ok: bool
    samples: int
    counterexamples: list[Counterexample]
    replayed: int
    elapsed: float


def sample(
    config: ExplorationConfig,
    samples: int = 10_000,
    seed: int = 0,
    *,
    max_failures: int = 10,
) -> SampleResult:
    """Random programs, schedules, crash points and resolutions.

    Every failure is replayed; a failure that does not reproduce raises.
    """
    start = time.perf_counter()
    rng = random.Random(seed)
    mem0, structure = config.build()
    snap0 = mem0.snapshot()
    strategy = config.strategy()
    checker = CrashChecker(config, structure)
    ops = config.operations()
    failures: list[Counterexample] = []
    for _ in range(samples):
        program = tuple(tuple(rng.choice(ops) for _ in range(config.ops_per_thread)) for _ in range(config.threads))
        mem = config.memory()
        mem.restore(snap0)
        run = ControlledRun(mem, {t: thread_body(structure, p, strategy) for t, p in enumerate(program)})
        # run a random prefix, then crash; a crash after completion is allowed too
        limit = rng.randrange(0, 60 * config.threads * config.ops_per_thread)
        while not run.finished() and len(run.schedule) < limit:
            run.step(rng.choice(run.enabled()))
        history = tuple((e.thread, e.kind, e.op, e.key, e.result) for e in run.history)
        if config.check_invariants and not structure.sorted_invariant(mem):
            reason, choices = "sorted-chain invariant broken", None
        else:
            outcome = mem.crash(rng)
            reason, choices = checker.check(history, outcome.image), outcome.choices
        if reason:
            cx = Counterexample(config, program, list(run.schedule), choices, [], reason)
            again = replay(cx)
            if again.reason != reason:
                raise AssertionError(f"counterexample did not replay: {reason!r} vs {again.reason!r}")
            cx.history = again.history
            failures.append(cx)
            if len(failures) >= max_failures:
                break
    return SampleResult(not failures, samples, failures, len(failures), time.perf_counter() - start)
