"""Parameter sweeps over size, thread count or update percentage, written as CSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from nvtraverse.baselines import PERSIST_MODES
from nvtraverse.harness.workload import CounterReport, WorkloadSpec, run_workload

AXES = ("size", "threads", "update")
COLUMNS = ("persist", "ops", "flushes_per_op", "fences_per_op", "avg_traversal")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: int
    persist: str
    ops: int
    flushes_per_op: float
    fences_per_op: float
    avg_traversal: float

    @classmethod
    def from_report(cls, axis: str, value: int, report: CounterReport) -> SweepRow:
        return cls(
            axis,
            value,
            report.spec.persist,
            report.ops,
            report.flushes_per_op,
            report.fences_per_op,
            report.avg_traversal,
        )


def point_spec(template: WorkloadSpec, axis: str, value: int, persist: str) -> WorkloadSpec:
    """The workload for one sweep point."""
    if axis == "size":
        spec = replace(template, key_range=value)
    elif axis == "threads":
        spec = replace(template, threads=value)
    elif axis == "update":
        if not 0 <= value <= 100:
            raise ValueError(f"update percentage {value} outside 0..100")
        spec = replace(template, mix=(value // 2, value - value // 2, 100 - value))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    return replace(spec, persist=persist)


def sweep(
    axis: str,
    values,
    template: WorkloadSpec | None = None,
    persists=PERSIST_MODES,
) -> list[SweepRow]:
    """One row per (value, persist mode)."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one axis value")
    template = template or WorkloadSpec()
    rows = []
    for value in values:
        for persist in persists:
            report = run_workload(point_spec(template, axis, value, persist))
            rows.append(SweepRow.from_report(axis, value, report))
    return rows


def write_csv(rows: list[SweepRow], path: str | Path) -> Path:
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((rows[0].axis, *COLUMNS))
        for r in rows:
            w.writerow((r.value, r.persist, r.ops, f"{r.flushes_per_op:.6f}", f"{r.fences_per_op:.6f}", f"{r.avg_traversal:.6f}"))
    return path


def read_csv(path: str | Path) -> list[SweepRow]:
    """Parse a sweep CSV; malformed or empty files raise ValueError."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty CSV")
        if len(header) < 5 or header[0] not in AXES or tuple(header[1:5]) != COLUMNS[:4]:
            raise ValueError(f"{path}: unexpected header {header}")
        axis = header[0]
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                extra = float(rec[5]) if len(rec) > 5 else 0.0
                rows.append(SweepRow(axis, int(rec[0]), rec[1], int(rec[2]), float(rec[3]), float(rec[4]), extra))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {rec}") from exc
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows
