"""Operation histories: invoke / respond / crash events and their file format.

One event per line: ``seq thread INV|RES|CRASH op key [result]``.  Crash
lines carry ``-`` in the thread, op and key columns.
"""

from __future__ import annotations

from typing import Any, NamedTuple


class HistoryError(ValueError):
    pass


class HistoryEvent(NamedTuple):
    seq: int
    thread: int | None
    kind: str  # INV | RES | CRASH
    op: str | None = None
    key: Any = None
    result: Any = None

    def line(self) -> str:
        if self.kind == "CRASH":
            return f"{self.seq} - CRASH - -"
        base = f"{self.seq} {self.thread} {self.kind} {self.op} {self.key}"
        if self.kind == "RES":
            base += f" {_fmt_result(self.result)}"
        return base


def _fmt_result(r) -> str:
    if isinstance(r, bool):
        return "T" if r else "F"
    return str(r)


def _parse_result(text: str):
    if text in ("T", "True", "true"):
        return True
    if text in ("F", "False", "false"):
        return False
    try:
        return int(text)
    except ValueError:
        return text


def format_history(events) -> str:
    return "".join(ev.line() + "\n" for ev in events)


def parse_history(text: str) -> list[HistoryEvent]:
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            seq = int(parts[0])
            kind = parts[2]
            if kind == "CRASH":
                events.append(HistoryEvent(seq, None, "CRASH"))
                continue
            thread, op, key = int(parts[1]), parts[3], int(parts[4])
            if kind == "INV":
                events.append(HistoryEvent(seq, thread, "INV", op, key))
            elif kind == "RES":
                events.append(HistoryEvent(seq, thread, "RES", op, key, _parse_result(parts[5])))
            else:
                raise HistoryError(f"line {lineno}: unknown event kind {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, HistoryError):
                raise
            raise HistoryError(f"line {lineno}: malformed history line {line!r}") from exc
    return events


def inv(seq, thread, op, key) -> HistoryEvent:
    return HistoryEvent(seq, thread, "INV", op, key)


def res(seq, thread, op, key, result) -> HistoryEvent:
    return HistoryEvent(seq, thread, "RES", op, key, result)


def crash(seq) -> HistoryEvent:
    return HistoryEvent(seq, None, "CRASH")


def renumber(events) -> list[HistoryEvent]:
    return [ev._replace(seq=i) for i, ev in enumerate(events)]
