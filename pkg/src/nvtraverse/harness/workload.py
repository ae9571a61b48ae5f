"""Count-based workloads: prefilled structures, insert/delete/lookup mixes.

Throughput on a simulator says little about persistent-memory hardware,
so a run is measured by what it issued: flushes, fences, CAS attempts and
reads, per thread and per operation type.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import asdict, dataclass, field, replace

from nvtraverse.baselines import PERSIST_MODES, strategy_for
from nvtraverse.execution import ControlledRun, Listener, run_sequential, thread_body
from nvtraverse.framework import run_operation
from nvtraverse.injector import PersistencePolicy
from nvtraverse.isa import Traversed
from nvtraverse.pmem import Counters, PersistentMemory
from nvtraverse.structures import make_structure

OP_NAMES = {"insert": "insert", "delete": "delete", "lookup": "find"}


@dataclass(frozen=True)
class WorkloadSpec:
    structure: str = "list"
    persist: str = "nvtraverse"
    threads: int = 1
    key_range: int = 1024
    mix: tuple[int, int, int] = (10, 10, 80)  # insert, delete, lookup percentages
    ops: int = 1000  # total across threads
    seed: int = 0
    buckets: int = 64
    mode: str = "controlled"  # controlled | free
    policy: PersistencePolicy = PersistencePolicy()

    def __post_init__(self):
        if len(self.mix) != 3 or any(m < 0 for m in self.mix) or sum(self.mix) != 100:
            raise ValueError(f"mix must be three non-negative percentages summing to 100, got {self.mix}")
        if self.structure not in ("list", "hash"):
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.persist not in PERSIST_MODES:
            raise ValueError(f"unknown persist mode {self.persist!r}")
        if self.threads < 1 or self.key_range < 1 or self.ops < 0 or self.buckets < 1:
            raise ValueError("threads, key_range and buckets must be positive and ops non-negative")
        if self.mode not in ("controlled", "free"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @staticmethod
    def parse_mix(text: str) -> tuple[int, int, int]:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"mix must look like I:D:L, got {text!r}")
        return tuple(int(p) for p in parts)  # type: ignore[return-value]

    def prefill_keys(self) -> list[int]:
        """r/2 distinct uniform keys (fixed by the seed)."""
        return sorted(random.Random(f"prefill-{self.seed}").sample(range(self.key_range), self.key_range // 2))

    def programs(self) -> list[list[tuple[str, int]]]:
        rng = random.Random(self.seed)
        ops = [OP_NAMES[name] for name in ("insert", "delete", "lookup")]
        out = []
        for t in range(self.threads):
            n = self.ops // self.threads + (t < self.ops % self.threads)
            out.append([(rng.choices(ops, weights=self.mix)[0], rng.randrange(self.key_range)) for _ in range(n)])
        return out


@dataclass
class OpStats:
    count: int = 0
    flushes: int = 0
    fences: int = 0
    cas: int = 0
    reads: int = 0

    def add(self, c: Counters) -> None:
        self.count += 1
        self.flushes += c.flushes
        self.fences += c.fences
        self.cas += c.cas
        self.reads += c.reads

    def averages(self) -> dict[str, float]:
        n = self.count or 1
        return {
            "flushes_per_op": self.flushes / n,
            "fences_per_op": self.fences / n,
            "cas_per_op": self.cas / n,
            "reads_per_op": self.reads / n,
        }


@dataclass
class CounterReport:
    spec: WorkloadSpec
    per_thread: dict[int, Counters]
    ops_per_thread: dict[int, int]
    per_op: dict[str, OpStats]
    traversed_nodes: int = 0  # nodes visited by traverse, summed over attempts
    elapsed: float = field(default=0.0, compare=False)  # wall clock, not part of the report bytes

    @property
    def ops(self) -> int:
        return sum(self.ops_per_thread.values())

    @property
    def totals(self) -> Counters:
        total = Counters()
        for c in self.per_thread.values():
            total = total + c
        return total

    def per_op_average(self, name: str) -> float:
        return getattr(self.totals, name) / (self.ops or 1)

    @property
    def flushes_per_op(self) -> float:
        return self.per_op_average("flushes")

    @property
    def fences_per_op(self) -> float:
        return self.per_op_average("fences")

    @property
    def avg_traversal(self) -> float:
        return self.traversed_nodes / (self.ops or 1)

    @property
    def throughput(self) -> float:
        return self.ops / self.elapsed if self.elapsed else 0.0

    def as_dict(self) -> dict:
        spec = asdict(self.spec)
        spec["mix"] = list(self.spec.mix)
        totals = self.totals.as_dict()
        return {
            "spec": spec,
            "ops": self.ops,
            "totals": totals,
            "averages": {k: v / (self.ops or 1) for k, v in totals.items()},
            "avg_traversal": self.avg_traversal,
            "per_thread": {
                str(t): {"ops": self.ops_per_thread[t], **c.as_dict()} for t, c in sorted(self.per_thread.items())
            },
            "per_op": {
                op: {"count": s.count, **s.averages()} for op, s in sorted(self.per_op.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=str)

    def summary(self) -> str:
        t = self.totals
        lines = [
            f"{self.spec.structure}/{self.spec.persist} threads={self.spec.threads} "
            f"range={self.spec.key_range} mix={':'.join(map(str, self.spec.mix))} ops={self.ops}",
            f"  flushes/op {self.flushes_per_op:.3f}  fences/op {self.fences_per_op:.3f}  "
            f"cas/op {t.cas / (self.ops or 1):.3f}  reads/op {t.reads / (self.ops or 1):.3f}",
        ]
        for op, s in sorted(self.per_op.items()):
            a = s.averages()
            lines.append(
                f"  {op:<6} n={s.count:<6} flushes {a['flushes_per_op']:.3f}  fences {a['fences_per_op']:.3f}"
            )
        if self.elapsed:
            lines.append(f"  throughput {self.throughput:.0f} ops/s (simulated, not a hardware figure)")
        return "\n".join(lines)


class _TraversalCounter(Listener):
    def __init__(self):
        self.nodes = 0
        self._lock = threading.Lock()

    def on_pseudo(self, thread, instr, result):
        if isinstance(instr, Traversed):
            with self._lock:
                self.nodes += len(instr.result.visited)


def build(spec: WorkloadSpec, *, trace: bool = False):
    """Prefilled structure on a memory whose counters start at zero."""
    mem = PersistentMemory(threadsafe=spec.mode == "free", trace=trace)
    structure = make_structure(spec.structure, mem, spec.prefill_keys(), spec.buckets)
    mem.reset_counters()
    if trace:
        mem.trace.clear()
    return mem, structure


def run_workload(spec: WorkloadSpec, seed: int | None = None) -> CounterReport:
    """Run ``spec`` (with ``seed`` overriding its own) and count what it issued."""
    if seed is not None and seed != spec.seed:
        spec = replace(spec, seed=seed)
    return execute(spec)[0]


def execute(spec: WorkloadSpec, *, trace: bool = False) -> tuple[CounterReport, PersistentMemory]:
    """Like :func:`run_workload` but also hand back the memory (and its trace)."""
    mem, structure = build(spec, trace=trace)
    strategy = strategy_for(spec.persist, spec.policy)
    programs = spec.programs()
    counter = _TraversalCounter()
    per_op: dict[str, OpStats] = {}
    start = time.perf_counter()
    if spec.mode == "controlled":
        run = ControlledRun(
            mem, {t: thread_body(structure, p, strategy) for t, p in enumerate(programs)}, listeners=[counter]
        )
        rng = random.Random(f"schedule-{spec.seed}")
        run.run(lambda enabled: enabled[0] if len(enabled) == 1 else rng.choice(enabled))
        for _, op, delta in run.op_counters:
            per_op.setdefault(op, OpStats()).add(delta)
    else:
        lock = threading.Lock()
        errors: list[BaseException] = []

        def worker(t: int, program):
            try:
                for op, key in program:
                    before = mem.counters(t)
                    run_sequential(mem, run_operation(structure, op, key, strategy), t, listeners=[counter])
                    delta = mem.counters(t) - before
                    with lock:
                        per_op.setdefault(op, OpStats()).add(delta)
            except BaseException as exc:  # surfaced after join
                errors.append(exc)

        workers = [threading.Thread(target=worker, args=(t, p)) for t, p in enumerate(programs)]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        if errors:
            raise errors[0]
    elapsed = time.perf_counter() - start
    per_thread = {t: mem.counters(t) for t in range(spec.threads)}
    report = CounterReport(
        spec,
        per_thread,
        {t: len(p) for t, p in enumerate(programs)},
        per_op,
        counter.nodes,
        elapsed,
    )
    return report, mem
