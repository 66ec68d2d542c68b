"""Measurement sinks, file export and text reports.

Record files have a fixed field order (``RECORD_FIELDS``) in both formats:

* ``jsonl``: one compact JSON object per line, keys in field order.
* ``csv``: a header row, then one row per record; ``flags`` is ``|``-joined.

``timestamp`` is simulated seconds (the read time of the answered query).
"""

from __future__ import annotations

import csv
import io
import json
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import FormatError

RECORD_FIELDS = (
    "measure_id", "sid_list", "direction", "epoch", "color",
    "interval_tx", "interval_rx", "interval_loss",
    "cumulative_tx", "cumulative_rx", "cumulative_loss",
    "timestamp", "flags",
)
_INT_FIELDS = {"measure_id", "epoch", "interval_tx", "interval_rx", "interval_loss",
               "cumulative_tx", "cumulative_rx", "cumulative_loss"}
FORMATS = ("jsonl", "csv")


@dataclass(frozen=True)
class MeasurementRecord:
    measure_id: int
    sid_list: str
    direction: str
    epoch: int
    color: str
    interval_tx: int
    interval_rx: int
    interval_loss: int
    cumulative_tx: int
    cumulative_rx: int
    cumulative_loss: int
    timestamp: float
    flags: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[int, str, int]:
        return self.measure_id, self.direction, self.epoch

    @classmethod
    def from_report(cls, report) -> MeasurementRecord:
        return cls(report.measure_id, report.sid_list, report.direction, report.epoch,
                   report.color.name, report.interval_tx, report.interval_rx,
                   report.interval_loss, report.cumulative_tx, report.cumulative_rx,
                   report.cumulative_loss, report.read_timestamp / 1e9, tuple(report.flags))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return {k: d[k] for k in RECORD_FIELDS}


assert tuple(f.name for f in fields(MeasurementRecord)) == RECORD_FIELDS


class TimeSeriesStore:
    """Append-only records indexed by (measure_id, direction).

    Callable, so it can be subscribed to the controller directly.
    """

    def __init__(self):
        self._records: list[MeasurementRecord] = []
        self._where: dict[tuple, int] = {}
        self._lock = threading.Lock()
        self.diagnostics: list[str] = []

    def __call__(self, report) -> None:
        self.append(MeasurementRecord.from_report(report))

    def __len__(self):
        return len(self._records)

    def append(self, record: MeasurementRecord) -> None:
        with self._lock:
            pos = self._where.get(record.key)
            if pos is not None:
                self.diagnostics.append(f"duplicate record {record.key}; replaced")
                self._records[pos] = record
                return
            self._where[record.key] = len(self._records)
            self._records.append(record)

    sink_append = append

    def records(self) -> list[MeasurementRecord]:
        with self._lock:
            return list(self._records)

    def query_series(self, measure_id: int, direction: str, first: int | None = None,
                     last: int | None = None) -> list[MeasurementRecord]:
        """Records of one series with ``first <= epoch <= last``, in epoch order."""
        hits = [r for r in self.records()
                if r.measure_id == measure_id and r.direction == direction
                and (first is None or r.epoch >= first) and (last is None or r.epoch <= last)]
        return sorted(hits, key=lambda r: r.epoch)


@dataclass
class TopologyRecord:
    nodes: list[dict] = field(default_factory=list)  # {id, addresses}
    edges: list[dict] = field(default_factory=list)  # {a, b, delay, loss_rate}

    def __post_init__(self):
        ids = {n["id"] for n in self.nodes}
        for e in self.edges:
            if e["a"] not in ids or e["b"] not in ids:
                raise ValueError(f"edge {e['a']}-{e['b']} references an undeclared node")

    @classmethod
    def from_config(cls, cfg) -> TopologyRecord:
        nodes = [{"id": n.id, "addresses": [n.address, *n.networks]} for n in cfg.nodes]
        edges = [{"a": e.a, "b": e.b, "delay": e.delay, "loss_rate": e.loss_rate}
                 for e in cfg.links]
        return cls(nodes, edges)

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "edges": self.edges}


class TopologyStore:
    def __init__(self):
        self.history: list[TopologyRecord] = []

    def __call__(self, topology: TopologyRecord) -> None:
        self.history.append(topology)

    @property
    def current(self) -> TopologyRecord | None:
        return self.history[-1] if self.history else None


# export / import

def _records_of(source) -> list[MeasurementRecord]:
    return source.records() if isinstance(source, TimeSeriesStore) else list(source)


def dumps_records(source, fmt: str = "jsonl") -> str:
    records = _records_of(source)
    if fmt == "jsonl":
        return "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in records:
            d = r.to_dict()
            d["flags"] = "|".join(r.flags)
            d["timestamp"] = repr(r.timestamp)
            writer.writerow([d[k] for k in RECORD_FIELDS])
        return buf.getvalue()
    raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def export_records(source, path, fmt: str = "jsonl") -> int:
    text = dumps_records(source, fmt)
    Path(path).write_text(text)
    return len(_records_of(source))


def _record_from(d: dict, line: int) -> MeasurementRecord:
    missing = [k for k in RECORD_FIELDS if k not in d]
    if missing:
        raise FormatError(f"missing fields {missing}", line)
    try:
        values = {k: d[k] for k in RECORD_FIELDS}
        for k in _INT_FIELDS:
            if isinstance(values[k], bool) or isinstance(values[k], float):
                raise ValueError(f"{k} must be an integer")
            values[k] = int(values[k])
        values["timestamp"] = float(values["timestamp"])
        values["sid_list"] = str(values["sid_list"])
        flags = values["flags"]
        if isinstance(flags, str):
            flags = [f for f in flags.split("|") if f]
        if not isinstance(flags, list):
            raise ValueError("flags must be a list")
        values["flags"] = tuple(str(f) for f in flags)
        if values["color"] not in ("R", "B"):
            raise ValueError(f"bad color {values['color']!r}")
        if values["direction"] not in ("forward", "reverse"):
            raise ValueError(f"bad direction {values['direction']!r}")
    except (TypeError, ValueError) as exc:
        raise FormatError(str(exc), line) from None
    return MeasurementRecord(**values)


def loads_records(text: str, fmt: str = "jsonl") -> list[MeasurementRecord]:
    out = []
    if fmt == "jsonl":
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", n) from None
            if not isinstance(d, dict):
                raise FormatError("expected a JSON object", n)
            out.append(_record_from(d, n))
        return out
    if fmt == "csv":
        rows = csv.reader(io.StringIO(text))
        header = next(rows, None)
        if header is None:
            return out
        if tuple(header) != RECORD_FIELDS:
            raise FormatError(f"unexpected header {header}", 1)
        for n, row in enumerate(rows, 2):
            if not row:
                continue
            if len(row) != len(RECORD_FIELDS):
                raise FormatError(f"expected {len(RECORD_FIELDS)} columns, got {len(row)}", n)
            out.append(_record_from(dict(zip(RECORD_FIELDS, row)), n))
        return out
    raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def import_records(path, fmt: str | None = None) -> list[MeasurementRecord]:
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "jsonl"
    return loads_records(path.read_text(), fmt)


# reports

def flow_totals(records) -> dict[tuple[int, str, str], int]:
    """Total interval loss per (measure_id, direction, sid_list)."""
    totals: dict[tuple[int, str, str], int] = defaultdict(int)
    for r in records:
        totals[r.measure_id, r.direction, r.sid_list] += r.interval_loss
    return dict(sorted(totals.items()))


def histogram(totals) -> dict[int, int]:
    """Number of flows per exact total-loss count."""
    hist: dict[int, int] = defaultdict(int)
    for value in totals:
        hist[value] += 1
    return dict(sorted(hist.items()))


def render_histogram(measured: dict[int, int], oracle: dict[int, int] | None = None,
                     width: int = 40) -> str:
    buckets = sorted(set(measured) | set(oracle or {}))
    peak = max([*measured.values(), *(oracle or {}).values(), 1])
    head = "lost packets | measured" + (" | oracle" if oracle is not None else "")
    lines = [head]
    for b in buckets:
        m = measured.get(b, 0)
        row = f"{b:>12} | {m:>3} {'#' * round(m * width / peak):<{width}}"
        if oracle is not None:
            o = oracle.get(b, 0)
            row += f" | {o:>3} {'#' * round(o * width / peak)}"
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def format_report(records) -> str:
    """Per-session totals, per-block table and anomaly flags."""
    records = sorted(records, key=lambda r: (r.measure_id, r.direction, r.epoch))
    if not records:
        return "no records\n"
    out = ["per-flow totals",
           f"{'measure':>7} {'direction':<9} {'blocks':>6} {'tx':>10} {'rx':>10} {'lost':>6}  sid_list"]
    groups: dict[tuple, list] = defaultdict(list)
    for r in records:
        groups[r.measure_id, r.direction, r.sid_list].append(r)
    for (mid, direction, sids), rs in groups.items():
        tx = sum(r.interval_tx for r in rs)
        rx = sum(r.interval_rx for r in rs)
        lost = sum(r.interval_loss for r in rs)
        out.append(f"{mid:>7} {direction:<9} {len(rs):>6} {tx:>10} {rx:>10} {lost:>6}  {sids}")
    out += ["", "per-block",
            f"{'measure':>7} {'direction':<9} {'epoch':>5} {'color':<5} {'tx':>8} {'rx':>8} "
            f"{'lost':>5} {'cum_lost':>8}  flags"]
    for r in records:
        out.append(f"{r.measure_id:>7} {r.direction:<9} {r.epoch:>5} {r.color:<5} "
                   f"{r.interval_tx:>8} {r.interval_rx:>8} {r.interval_loss:>5} "
                   f"{r.cumulative_loss:>8}  {','.join(r.flags) or '-'}")
    flagged = [r for r in records if r.flags]
    out += ["", f"anomalies: {len(flagged)}"]
    for r in flagged:
        out.append(f"  measure {r.measure_id} {r.direction} epoch {r.epoch}: {','.join(r.flags)}")
    return "\n".join(out) + "\n"
