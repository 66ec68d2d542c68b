"""Interval loss from cumulative per-color samples.

Counters never reset, so the loss of block ``b`` is the difference between
the cumulative loss read for ``b`` and the one read for the previous block of
the same color (``b - 2``), with a zero baseline for the first block of each
color.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..errors import StaleSample
from ..packet import Color

FORWARD = "forward"
REVERSE = "reverse"


@dataclass(frozen=True)
class LossReport:
    measure_id: int
    epoch: int
    color: Color
    direction: str
    interval_tx: int
    interval_rx: int
    interval_loss: int
    cumulative_tx: int
    cumulative_rx: int
    cumulative_loss: int
    read_timestamp: int  # ns of simulated time
    sid_list: str = ""
    flags: tuple[str, ...] = ()
    sender_seq: int = 0
    sent_at: int = 0

    @property
    def anomalous(self) -> bool:
        return bool(self.flags)

    def with_flags(self, *flags: str) -> LossReport:
        merged = tuple(dict.fromkeys(self.flags + tuple(flags)))
        return replace(self, flags=merged)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["color"] = self.color.name
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LossReport:
        d = dict(d)
        d["color"] = Color[d["color"]]
        d["flags"] = tuple(d.get("flags", ()))
        return cls(**d)


def compute_interval_loss(previous: LossReport | None, sample, sid_list: str = "") -> LossReport:
    """Turn a cumulative ``sample`` into an interval report.

    ``previous`` is the last report of the same (direction, color), or None.
    """
    if previous is not None and sample.epoch <= previous.epoch:
        raise StaleSample(
            f"{sample.direction} block {sample.epoch} is not newer than block {previous.epoch}")
    cum_loss = sample.tx - sample.rx
    if previous is None:
        base_tx = base_rx = base_loss = 0
    else:
        base_tx, base_rx, base_loss = (previous.cumulative_tx, previous.cumulative_rx,
                                       previous.cumulative_loss)
    interval_loss = cum_loss - base_loss
    flags = tuple(sample.flags)
    if cum_loss < 0 or interval_loss < 0:
        flags += ("negative_loss",)
    return LossReport(
        measure_id=sample.measure_id,
        epoch=sample.epoch,
        color=Color.of_epoch(sample.epoch),
        direction=sample.direction,
        interval_tx=sample.tx - base_tx,
        interval_rx=sample.rx - base_rx,
        interval_loss=interval_loss,
        cumulative_tx=sample.tx,
        cumulative_rx=sample.rx,
        cumulative_loss=cum_loss,
        read_timestamp=sample.received_at,
        sid_list=sid_list,
        flags=flags,
        sender_seq=sample.sender_seq,
        sent_at=sample.sent_at,
    )


class LossTracker:
    """Keeps the last report per (direction, color) and differences new samples."""

    def __init__(self, sid_lists: dict[str, str] | None = None):
        self._last: dict[tuple[str, Color], LossReport] = {}
        self.sid_lists = sid_lists or {}
        self.reports: list[LossReport] = []

    def add(self, sample) -> LossReport:
        key = (sample.direction, Color.of_epoch(sample.epoch))
        report = compute_interval_loss(self._last.get(key), sample,
                                       self.sid_lists.get(sample.direction, ""))
        self._last[key] = report
        self.reports.append(report)
        return report
