"""Per-flow, per-color packet counters keyed by SID list.

Flows live in fixed-key tables segregated by direction and SID-list length
(16 length classes per direction), so a lookup only ever hashes lists of one
length. Each flow keeps one counter shard per worker; reads sum the shards.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass

from .errors import AlreadyMonitored, EpochSkew, NotMonitored
from .packet import MAX_SIDS, Color, SidList


class Direction(enum.Enum):
    INGRESS = "ingress"
    EGRESS = "egress"


@dataclass(frozen=True)
class FlowKey:
    direction: Direction
    sids: SidList

    def __str__(self):
        return f"{self.direction.value}:{self.sids}"


@dataclass(frozen=True)
class ColorState:
    active_color: Color
    epoch: int


@dataclass(frozen=True)
class CounterSnapshot:
    flow: FlowKey
    color: Color
    packets: int
    bytes: int
    epoch_at_read: int
    active_read: bool = False


class FlowCounters:
    """Cumulative counters for one flow: ``packets[color][worker]``."""

    __slots__ = ("packets", "bytes")

    def __init__(self, workers: int):
        self.packets = [[0] * workers, [0] * workers]
        self.bytes = [[0] * workers, [0] * workers]

    def total(self, color: Color) -> tuple[int, int]:
        return sum(self.packets[color]), sum(self.bytes[color])


class CountingEngine:
    """Length-segregated flow tables plus the node's active-color epoch.

    ``count_packet`` touches only the caller's worker shard and never takes
    the table lock; adds and removes are serialized with each other.
    """

    def __init__(self, workers: int = 1, max_sids: int = MAX_SIDS):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self.max_sids = max_sids
        self._tables = {
            (direction, length): {}
            for direction in Direction
            for length in range(1, max_sids + 1)
        }
        self._state = ColorState(Color.R, 0)
        self._lock = threading.Lock()

    @property
    def table_count(self) -> int:
        return len(self._tables)

    @property
    def color_state(self) -> ColorState:
        return self._state

    def _table(self, key: FlowKey) -> dict:
        try:
            return self._tables[key.direction, len(key.sids)]
        except KeyError:
            raise NotMonitored(f"SID list length {len(key.sids)} exceeds {self.max_sids}") from None

    def table_of(self, key: FlowKey) -> tuple[Direction, int]:
        """(direction, length class) of the table that holds ``key``."""
        self._table(key)
        return key.direction, len(key.sids)

    def add_monitored_flow(self, key: FlowKey) -> None:
        with self._lock:
            table = self._table(key)
            if key.sids in table:
                raise AlreadyMonitored(str(key))
            table[key.sids] = FlowCounters(self.workers)

    def remove_monitored_flow(self, key: FlowKey) -> tuple[CounterSnapshot, CounterSnapshot]:
        with self._lock:
            table = self._table(key)
            counters = table.pop(key.sids, None)
            if counters is None:
                raise NotMonitored(str(key))
        epoch = self._state.epoch
        return tuple(
            CounterSnapshot(key, c, *counters.total(c), epoch)
            for c in (Color.R, Color.B))

    def is_monitored(self, key: FlowKey) -> bool:
        table = self._tables.get((key.direction, len(key.sids)))
        return table is not None and key.sids in table

    def count_packet(self, key: FlowKey, color: Color, size_bytes: int, worker_id: int = 0) -> bool:
        table = self._tables.get((key.direction, len(key.sids)))
        if table is None:
            return False
        counters = table.get(key.sids)
        if counters is None:
            return False
        counters.packets[color][worker_id] += 1
        counters.bytes[color][worker_id] += size_bytes
        return True

    def set_active_color(self, new_epoch: int) -> ColorState:
        current = self._state
        if new_epoch != current.epoch + 1:
            raise EpochSkew(f"expected epoch {current.epoch + 1}, got {new_epoch}")
        # single reference swap: a marking step sees either the old or the new state
        self._state = ColorState(Color.of_epoch(new_epoch), new_epoch)
        return self._state

    def read_counters(self, key: FlowKey, color: Color) -> CounterSnapshot:
        state = self._state
        counters = self._table(key).get(key.sids)
        if counters is None:
            raise NotMonitored(str(key))
        packets, nbytes = counters.total(color)
        return CounterSnapshot(key, color, packets, nbytes, state.epoch,
                               active_read=(color == state.active_color))

    def list_flows(self, direction: Direction) -> list[FlowKey]:
        with self._lock:
            return [FlowKey(direction, sids)
                    for length in range(1, self.max_sids + 1)
                    for sids in self._tables[direction, length]]
