"""Durable-linearizability checking and schedule/crash exploration."""

from __future__ import annotations

from nvtraverse.verifier.checker import (
    Verdict,
    brute_force_linearizable,
    check_durable_linearizability,
    check_linearizability,
)
from nvtraverse.verifier.history import HistoryError, HistoryEvent, format_history, parse_history

_EXPLORER = ("ExplorationBudget", "ExplorationConfig", "ExplorationResult", "explore", "replay", "sample")


def __getattr__(name):
    # the explorer depends on the executors, which depend on this package
    if name in _EXPLORER:
        from nvtraverse.verifier import explorer

        return getattr(explorer, name)
    raise AttributeError(name)


__all__ = [
    "HistoryError",
    "HistoryEvent",
    "Verdict",
    "brute_force_linearizable",
    "check_durable_linearizability",
    "check_linearizability",
    "format_history",
    "parse_history",
    *_EXPLORER,
]
