"""Acceptance criteria, each at its stated budget and tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary).  Criteria 1 and 4 explore every program exhaustively
and take several minutes each.
"""

from __future__ import annotations

import random
import statistics

import pytest
from support import build, legal_order_finals, oracle, phase_ops, random_history, reachable_sequence, run

from nvtraverse.execution import ControlledRun, TraceRecorder, thread_body
from nvtraverse.framework import (
    MarkGuard,
    check_marked_immutability,
    check_suffix,
    check_traverse_purity,
    run_operation,
    run_recovery,
)
from nvtraverse.harness.plotting import plot
from nvtraverse.harness.sweep import sweep, write_csv
from nvtraverse.harness.workload import WorkloadSpec
from nvtraverse.injector import KNOWN_SURVIVORS, MUTATIONS, NVTraverse, PersistencePolicy
from nvtraverse.verifier.checker import brute_force_linearizable, check_durable_linearizability
from nvtraverse.verifier.explorer import ExplorationBudget, ExplorationConfig, explore, replay, sample

TEN_MINUTES = 600.0
SIZES = [256, 512, 1024, 2048, 4096, 8192]


# -- 1: exhaustive durable linearizability -----------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(1)
def test_exhaustive_exploration_finds_no_violation(detail):
    for structure in ("list", "hash"):
        r = explore(ExplorationConfig(structure=structure, buckets=2))
        s = r.stats
        detail.append(f"{structure}: {r.verdict}, {s.programs} programs, {s.states} states, {s.elapsed:.0f}s")
        assert r.verdict == "PASS", r.counterexample and r.counterexample.reason
        assert s.programs == 666 and s.crash_images > 0
        assert s.elapsed <= TEN_MINUTES


# -- 2: randomized extension -----------------------------------------------------------------------------


@pytest.mark.criterion(2)
def test_sampled_schedules_find_no_violation(detail):
    cfg = ExplorationConfig(threads=3, ops_per_thread=3, keys=(1, 2, 3, 4))
    r = sample(cfg, samples=10_000, seed=2024)
    detail.append(f"{r.samples} samples, {len(r.counterexamples)} violations, {r.replayed} replayed, {r.elapsed:.0f}s")
    for cx in r.counterexamples:
        assert replay(cx).reason == cx.reason
    assert r.samples == 10_000
    assert r.ok, r.counterexamples and r.counterexamples[0].reason


# -- 3: negative control ----------------------------------------------------------------------------------


@pytest.mark.criterion(3)
def test_unpersisted_list_loses_completed_inserts(detail):
    r = explore(ExplorationConfig(persist="none"))
    assert r.verdict == "FAIL"
    reason = r.counterexample.reason
    detail.append(reason)
    assert "completed insert" in reason and "absent" in reason
    assert replay(r.counterexample).reason == reason


# -- 4: necessity mutations -------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(4)
def test_each_mutation_is_killed_or_a_documented_survivor(detail):
    killed, survived = [], []
    for mutation in MUTATIONS:
        cfg = ExplorationConfig(policy=PersistencePolicy().mutated(mutation), eviction="adversarial")
        r = explore(cfg, ExplorationBudget(accept="history"))
        if r.verdict == "FAIL":
            assert replay(r.counterexample).reason == r.counterexample.reason
            killed.append(mutation)
        else:
            assert r.verdict == "PASS"
            survived.append(mutation)
    detail.append(f"{len(killed)}/{len(MUTATIONS)} mutations killed")
    detail += [f"{m} survives (documented finding)" for m in survived]
    assert set(survived) == set(KNOWN_SURVIVORS)


# -- 5: count trends over list size ---------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_flush_counts_follow_the_expected_trends(detail, tmp_path):
    rows = sweep("size", SIZES, WorkloadSpec(mix=(0, 0, 100), ops=100), persists=["nvtraverse", "izraelevitz"])
    path = write_csv(rows, tmp_path / "size.csv")
    assert plot(path, tmp_path / "size.png").exists()
    nv = {r.value: r for r in rows if r.persist == "nvtraverse"}
    iz = {r.value: r for r in rows if r.persist == "izraelevitz"}

    nv_flushes = [nv[v].flushes_per_op for v in SIZES]
    spread = max(nv_flushes) / min(nv_flushes) - 1
    x = [iz[v].avg_traversal for v in SIZES]
    y = [iz[v].flushes_per_op for v in SIZES]
    slope, _ = statistics.linear_regression(x, y)
    r2 = statistics.correlation(x, y) ** 2
    ratio = {v: iz[v].flushes_per_op / nv[v].flushes_per_op for v in (256, 8192)}
    widening = ratio[8192] / ratio[256]
    detail.append(
        f"nvtraverse spread {spread:.1%}; izraelevitz slope {slope:.3f} R2 {r2:.4f}; "
        f"ratio {ratio[256]:.1f}x -> {ratio[8192]:.1f}x ({widening:.1f}x wider)"
    )
    assert spread <= 0.10
    assert slope > 0 and r2 >= 0.99
    assert widening >= 4


# -- 6: exact per-operation counts ----------------------------------------------------------------------------

KEYS = [1, 3, 5, 7]


def single_op(op, key):
    mem, s = build(KEYS, trace=True)
    rec = TraceRecorder()
    result = run(mem, run_operation(s, op, key, NVTraverse()), listeners=[rec])
    (_, tr), = rec.traversals
    return result, mem.counters(0), tr, phase_ops(mem.trace, "critical")


@pytest.mark.criterion(6)
def test_single_operations_match_hand_derived_counts(detail):
    for key in range(0, 9):
        found, c, tr, _ = single_op("find", key)
        assert found == (key in KEYS)
        assert c.fences == 2
        assert c.flushes == len(tr.read_fields) + 1

    ok, c, _, crit = single_op("insert", 4)
    assert ok and (c.flushes, c.fences) == (7, 3)
    assert crit[-4:] == ["FE", "CAS", "FL", "FE"]
    ok, c, _, _ = single_op("insert", 5)
    assert not ok and (c.flushes, c.fences) == (3, 2)

    ok, c, _, crit = single_op("delete", 5)
    assert ok and (c.flushes, c.fences) == (6, 4)
    assert crit == ["R*", "R", "FL", "FE", "CAS", "FL", "FE", "CAS", "FL", "FE"]
    ok, c, _, _ = single_op("delete", 4)
    assert not ok and (c.flushes, c.fences) == (3, 2)
    detail.append("find 3/2, insert 7/3, delete 6/4, unsuccessful update 3/2 (flushes/fences)")


# -- 7: checker self-validation --------------------------------------------------------------------------------


@pytest.mark.criterion(7)
def test_checker_agrees_with_brute_force(detail):
    rng = random.Random(7)
    verdicts = []
    for _ in range(1000):
        h = random_history(rng, max_ops=8)
        dfs = check_durable_linearizability(h).ok
        assert dfs == brute_force_linearizable(h), h
        assert dfs == oracle(h), h
        verdicts.append(dfs)
    detail.append(f"1000 histories, {sum(verdicts)} accepted, {1000 - sum(verdicts)} rejected, no disagreement")
    assert any(verdicts) and not all(verdicts)


# -- 8: framework contracts ---------------------------------------------------------------------------------------


def contract_run(rng: random.Random, kind: str):
    mem, s = build(rng.sample(range(1, 7), rng.randint(0, 4)), kind=kind, trace=True)
    rec = TraceRecorder()
    threads = rng.randint(1, 3)
    programs = {t: [(rng.choice(["insert", "delete", "find"]), rng.randint(1, 6)) for _ in range(3)] for t in range(threads)}
    r = ControlledRun(mem, {t: thread_body(s, p, NVTraverse()) for t, p in programs.items()}, listeners=[rec], guard=MarkGuard())
    r.run(lambda enabled: rng.choice(enabled))
    assert check_traverse_purity(mem.trace) == []
    assert check_marked_immutability(mem.trace) == []
    assert rec.traversals and all(check_suffix(tr) for _, tr in rec.traversals)
    assert s.sorted_invariant(mem)
    return len(rec.traversals)


def disconnect_instance(rng: random.Random):
    keys = sorted(rng.sample(range(1, 9), rng.randint(1, 6)))
    marked = rng.sample(keys, rng.randint(1, min(4, len(keys))))
    finals = legal_order_finals(keys, marked)
    mem, s = build(keys, marked)
    run(mem, run_recovery(s))
    assert finals == {tuple(reachable_sequence(s, mem))}, (keys, marked)


@pytest.mark.criterion(8)
def test_framework_contracts_hold_on_random_runs(detail):
    rng = random.Random(8)
    traversals = 0
    for i in range(1000):
        traversals += contract_run(rng, "hash" if i % 4 == 3 else "list")
        disconnect_instance(rng)
    detail.append(f"1000 runs, {traversals} traversals checked, 1000 disconnection instances")
