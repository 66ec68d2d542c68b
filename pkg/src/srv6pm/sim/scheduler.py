"""Discrete-event scheduler over integer-nanosecond simulated time."""

from __future__ import annotations

import hashlib
import heapq
import itertools


class EventScheduler:
    """Events fire in (time, insertion order). Every fired event is folded
    into a running trace digest so two runs can be compared cheaply."""

    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._trace = hashlib.blake2b(digest_size=16)
        self.fired = 0

    def call_at(self, t_ns: int, fn, *args, label: str = "") -> None:
        if t_ns < self.now:
            raise ValueError(f"cannot schedule at {t_ns} before now={self.now}")
        heapq.heappush(self._queue, (t_ns, next(self._seq), label, fn, args))

    def call_later(self, delay_ns: int, fn, *args, label: str = "") -> None:
        self.call_at(self.now + delay_ns, fn, *args, label=label)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def __len__(self):
        return len(self._queue)

    def run_until(self, t_end: int) -> int:
        """Fire every event with time <= ``t_end``; the clock ends at ``t_end``."""
        if t_end < self.now:
            raise ValueError(f"t_end {t_end} is before now={self.now}")
        q = self._queue
        fired = 0
        while q and q[0][0] <= t_end:
            t, _seq, label, fn, args = heapq.heappop(q)
            self.now = t
            if label:
                self._trace.update(f"{t}:{label};".encode())
            fn(*args)
            fired += 1
        self.now = t_end
        self.fired += fired
        return fired

    def trace_digest(self) -> str:
        return self._trace.copy().hexdigest()
