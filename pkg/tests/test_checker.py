from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from support import oracle, random_history

from nvtraverse.verifier.checker import (
    brute_force_linearizable,
    check_durable_linearizability,
    check_linearizability,
    operations_from_history,
)
from nvtraverse.verifier.history import (
    HistoryError,
    HistoryEvent,
    crash,
    format_history,
    inv,
    parse_history,
    renumber,
    res,
)


def seq(*events):
    return renumber(events)


# -- durable linearizability ----------------------------------------------------------------


def test_completed_insert_lost_after_crash():
    h = seq(inv(0, 1, "insert", 3), res(0, 1, "insert", 3, True), crash(0), inv(0, 2, "find", 3), res(0, 2, "find", 3, False))
    v = check_durable_linearizability(h)
    assert not v.ok and v.witness is None


def test_completed_insert_survives_crash():
    h = seq(inv(0, 1, "insert", 3), res(0, 1, "insert", 3, True), crash(0), inv(0, 2, "find", 3), res(0, 2, "find", 3, True))
    assert check_durable_linearizability(h).ok


@pytest.mark.parametrize("found", [True, False])
def test_pending_insert_may_or_may_not_take_effect(found):
    h = seq(inv(0, 1, "insert", 3), crash(0), inv(0, 2, "find", 3), res(0, 2, "find", 3, found))
    assert check_durable_linearizability(h).ok


def test_pending_op_cut_by_crash_cannot_take_effect_later():
    # the insert must precede both finds if it happens at all
    h = seq(
        inv(0, 1, "insert", 3),
        crash(0),
        inv(0, 2, "find", 3),
        res(0, 2, "find", 3, False),
        inv(0, 2, "find", 3),
        res(0, 2, "find", 3, True),
    )
    assert not check_durable_linearizability(h).ok


def test_witness_is_a_valid_order():
    h = seq(
        inv(0, 1, "insert", 1),
        inv(0, 2, "delete", 1),
        res(0, 2, "delete", 1, True),
        res(0, 1, "insert", 1, True),
    )
    v = check_durable_linearizability(h)
    ops = {o.id: o for o in v.operations}
    assert [(ops[i].op, ops[i].key) for i in v.witness] == [("insert", 1), ("delete", 1)]


# -- linearizability -----------------------------------------------------------------------------


def test_sequential_history_is_linearizable():
    h = seq(inv(0, 1, "insert", 3), res(0, 1, "insert", 3, True), inv(0, 1, "find", 3), res(0, 1, "find", 3, True))
    assert check_linearizability(h).ok


def test_overlapping_find_sees_insert():
    h = seq(inv(0, 1, "insert", 3), inv(0, 2, "find", 3), res(0, 2, "find", 3, True), res(0, 1, "insert", 3, True))
    assert check_linearizability(h).ok


def test_find_true_without_insert():
    h = seq(inv(0, 2, "find", 3), res(0, 2, "find", 3, True))
    assert not check_linearizability(h).ok


def test_initial_contents():
    h = seq(inv(0, 2, "find", 3), res(0, 2, "find", 3, True))
    assert check_linearizability(h, initial={3}).ok


def test_crash_in_crash_free_check_is_rejected():
    with pytest.raises(HistoryError):
        check_linearizability(seq(crash(0)))


# -- malformed histories -----------------------------------------------------------------------------


@pytest.mark.parametrize(
    "events",
    [
        [res(0, 1, "find", 3, True)],
        [inv(0, 1, "find", 3), inv(1, 1, "find", 4)],
        [inv(0, 1, "find", 3), res(1, 1, "find", 4, True)],
        [inv(1, 1, "find", 3), res(0, 1, "find", 3, True)],
        [HistoryEvent(0, 1, "HELLO", "find", 3)],
    ],
)
def test_malformed_histories(events):
    with pytest.raises(HistoryError):
        check_durable_linearizability(events)


def test_unknown_operation():
    with pytest.raises(HistoryError):
        check_durable_linearizability(seq(inv(0, 1, "upsert", 3), res(0, 1, "upsert", 3, True)))


# -- file format -----------------------------------------------------------------------------------


def test_history_format_roundtrip():
    h = seq(inv(0, 1, "insert", 3), res(0, 1, "insert", 3, True), crash(0), inv(0, 2, "find", 3), res(0, 2, "find", 3, False))
    text = format_history(h)
    assert text.splitlines() == ["0 1 INV insert 3", "1 1 RES insert 3 T", "2 - CRASH - -", "3 2 INV find 3", "4 2 RES find 3 F"]
    assert parse_history(text) == h


@pytest.mark.parametrize("text", ["x 1 INV find 3", "0 1 INV find", "0 1 RES find 3", "0 1 BOOM find 3"])
def test_parse_rejects_bad_lines(text):
    with pytest.raises(HistoryError):
        parse_history(text)


def test_parse_skips_blank_lines():
    assert parse_history("\n0 1 INV find 3\n\n") == [inv(0, 1, "find", 3)]


# -- cross-checks against an independent oracle ------------------------------------------------------------


def test_dfs_agrees_with_brute_force_on_random_histories():
    rng = random.Random(2024)
    verdicts = []
    for _ in range(300):
        h = random_history(rng)
        dfs = check_durable_linearizability(h).ok
        assert dfs == brute_force_linearizable(h) == oracle(h), format_history(h)
        verdicts.append(dfs)
    assert any(verdicts) and not all(verdicts)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_witness_replays(seed):
    h = random_history(random.Random(seed))
    v = check_durable_linearizability(h)
    if not v.ok:
        return
    ops = {o.id: o for o in v.operations}
    state = set()
    for i in v.witness:
        o = ops[i]
        r = {"insert": o.key not in state, "delete": o.key in state, "find": o.key in state}[o.op]
        if o.op == "insert":
            state.add(o.key)
        elif o.op == "delete":
            state.discard(o.key)
        assert o.result is None or o.result == r
    assert {i for i, o in ops.items() if not o.optional} <= set(v.witness)


def test_operations_from_history_marks_cut_off_ops_optional():
    h = seq(inv(0, 1, "insert", 3), crash(0), inv(0, 2, "find", 3))
    ops = operations_from_history(h)
    assert [o.optional for o in ops] == [True, True]
    assert ops[0].res == 1
