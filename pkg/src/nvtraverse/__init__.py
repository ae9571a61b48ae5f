"""NVTraverse: durable lock-free traversal structures over simulated persistent memory."""

from __future__ import annotations

from nvtraverse.baselines import Izraelevitz, Volatile, strategy_for, wrap_izraelevitz, wrap_none
from nvtraverse.framework import ContractViolation, NonconformingStructure, TraverseResult, run_operation
from nvtraverse.injector import Durable, NVTraverse, PersistencePolicy, wrap
from nvtraverse.pmem import Counters, EvictionPolicy, PersistentMemory
from nvtraverse.structures import HarrisList, HashTable, make_structure, sequential_oracle

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "Counters",
    "Durable",
    "EvictionPolicy",
    "HarrisList",
    "HashTable",
    "Izraelevitz",
    "NVTraverse",
    "NonconformingStructure",
    "PersistencePolicy",
    "PersistentMemory",
    "TraverseResult",
    "Volatile",
    "make_structure",
    "run_operation",
    "sequential_oracle",
    "strategy_for",
    "wrap",
    "wrap_izraelevitz",
    "wrap_none",
]
