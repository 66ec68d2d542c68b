"""SRv6 node behavior: classification, encapsulation, coloring and counting,
local SID processing, and the TWAMP-light loss-measurement agents.

A ``Node`` is driven by a runtime (the simulator, or ``NullRuntime`` in unit
tests) that owns time, timers and links. Nodes never share state directly;
everything between nodes travels as packets.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from ipaddress import IPv6Address, IPv6Network

from .counting import CounterSnapshot, CountingEngine, Direction, FlowKey
from .errors import (
    AlreadyRunning,
    InvalidOptions,
    LengthError,
    MalformedPacket,
    NoSegmentsLeft,
    ReservedNonZero,
    SessionStopped,
    UnknownSession,
    UnmatchedSeq,
)
from .packet import (
    CTRL_IN_BAND,
    CTRL_OUT_OF_BAND,
    Color,
    LmQuery,
    LmResponse,
    Packet,
    SidList,
    build_probe_packet,
    decode_probe_payload,
    encapsulate,
    make_udp_packet,
    encode_lm_response,
    parse_sid,
    set_color,
    get_color,
    srh_advance,
)

log = logging.getLogger(__name__)


def resolve_epoch(block_number: int, reference_epoch: int) -> int:
    """Map an 8-bit wire block number to the full epoch nearest ``reference_epoch``.

    Candidates are restricted to ``reference_epoch - 128 < e <= reference_epoch + 127``.
    """
    offset = (block_number - reference_epoch) % 256
    if offset > 127:
        offset -= 256
    return reference_epoch + offset


class Behavior(enum.Enum):
    END = "End"
    END_DECAP = "End.DT6"
    END_OP = "End.OP"

    @classmethod
    def from_action(cls, action: str) -> Behavior:
        aliases = {"End": cls.END, "End.DT6": cls.END_DECAP, "End.DX6": cls.END_DECAP,
                   "End.DT4": cls.END_DECAP, "End.DX4": cls.END_DECAP, "End.OP": cls.END_OP}
        try:
            return aliases[action]
        except KeyError:
            raise InvalidOptions(f"unsupported SRv6 behavior {action!r}") from None


@dataclass(frozen=True)
class SrPolicy:
    destination: IPv6Network
    sid_list: SidList
    encapmode: str = "encap"
    table: int = 0

    def __post_init__(self):
        if self.encapmode != "encap":
            raise InvalidOptions(f"only encapmode 'encap' is supported, got {self.encapmode!r}")

    @property
    def ingress_key(self) -> FlowKey:
        return FlowKey(Direction.INGRESS, self.sid_list)


@dataclass(frozen=True)
class LocalSid:
    sid: IPv6Address
    behavior: Behavior
    table: int = 0


# forwarding decisions

@dataclass
class Forward:
    next_hop: str
    packet: Packet


@dataclass
class DeliverLocal:
    packet: Packet


@dataclass
class Punt:
    packet: Packet


@dataclass
class Drop:
    reason: str
    packet: Packet


ForwardingDecision = Forward | DeliverLocal | Punt | Drop


class NullRuntime:
    """Runtime for a node outside a simulation: time stands still, output is recorded."""

    def __init__(self):
        self.time = 0
        self.sent = []
        self.delivered = []
        self.dropped = []
        self.timers = []

    def now(self) -> int:
        return self.time

    def call_at(self, t_ns, fn, *args, label=""):
        self.timers.append((t_ns, fn, args))

    def transmit(self, node, next_hop, pkt):
        self.sent.append((node.id, next_hop, pkt))

    def send_out_of_band(self, node, dst, pkt):
        self.sent.append((node.id, str(dst), pkt))

    def deliver(self, node, pkt):
        self.delivered.append((node.id, pkt))

    def on_stamp(self, node, pkt):
        pass

    def on_egress(self, node, pkt):
        pass

    def on_drop(self, node, pkt, reason):
        self.dropped.append((node.id, reason, pkt))


class Node:
    """An SRv6 router."""

    def __init__(self, node_id: str, address, *, locator=None, networks=(), punt_sid=None,
                 workers: int = 1, runtime=None):
        self.id = node_id
        self.address = parse_sid(address)
        self.locator = IPv6Network(locator) if locator else IPv6Network(f"{self.address}/128")
        self.networks = [IPv6Network(n) for n in networks]
        self.punt_sid = parse_sid(punt_sid) if punt_sid else None
        self.engine = CountingEngine(workers)
        self.runtime = runtime or NullRuntime()
        self.policies: dict[tuple[int, IPv6Network], SrPolicy] = {}
        self.local_sids: dict[IPv6Address, LocalSid] = {}
        self.routes: dict[IPv6Network, str] = {}
        self.diagnostics: list[tuple[int, str, str]] = []
        self._route_cache: dict[IPv6Address, str | None] = {}
        self._policy_cache: dict[IPv6Address, SrPolicy | None] = {}
        self._local_cache: dict[IPv6Address, bool] = {}
        self._punt_handlers: dict[tuple[SidList, tuple[int, int]], object] = {}
        self._oob_handlers: dict[tuple[int, int], list] = {}
        self._worker_rr = 0
        # marking clock: color switches every interval_ns, anchored at t=0
        self._interval_ns = None
        self._clock_users = 0
        self._clock_generation = 0
        self._boundary_listeners: list = []

    def __repr__(self):
        return f"Node({self.id!r})"

    # configuration

    def add_route(self, prefix, next_hop: str) -> None:
        self.routes[IPv6Network(prefix)] = next_hop
        self._route_cache.clear()

    def add_policy(self, policy: SrPolicy) -> None:
        self.policies[policy.table, policy.destination] = policy
        self._policy_cache.clear()

    def remove_policy(self, table: int, destination) -> SrPolicy:
        policy = self.policies.pop((table, IPv6Network(destination)))
        self._policy_cache.clear()
        return policy

    def add_local_sid(self, local: LocalSid) -> None:
        self.local_sids[local.sid] = local
        if local.behavior is Behavior.END_OP and self.punt_sid is None:
            self.punt_sid = local.sid

    def remove_local_sid(self, sid) -> LocalSid:
        return self.local_sids.pop(parse_sid(sid))

    def diagnose(self, kind: str, detail: str = "") -> None:
        self.diagnostics.append((self.runtime.now(), kind, detail))
        log.debug("%s: %s %s", self.id, kind, detail)

    # lookups

    def lookup_route(self, dst: IPv6Address) -> str | None:
        try:
            return self._route_cache[dst]
        except KeyError:
            pass
        best, best_len = None, -1
        for prefix, hop in self.routes.items():
            if prefix.prefixlen > best_len and dst in prefix:
                best, best_len = hop, prefix.prefixlen
        self._route_cache[dst] = best
        return best

    def match_policy(self, dst: IPv6Address) -> SrPolicy | None:
        try:
            return self._policy_cache[dst]
        except KeyError:
            pass
        best = None
        for (_table, prefix), policy in self.policies.items():
            if dst in prefix and (best is None or prefix.prefixlen > best.destination.prefixlen):
                best = policy
        self._policy_cache[dst] = best
        return best

    def is_local_network(self, dst: IPv6Address) -> bool:
        try:
            return self._local_cache[dst]
        except KeyError:
            hit = any(dst in n for n in self.networks)
            self._local_cache[dst] = hit
            return hit

    # marking clock

    @property
    def interval_ns(self):
        return self._interval_ns

    def arm_marking(self, interval_ns: int) -> None:
        """Start (or join) the node's color schedule: one switch every ``interval_ns``."""
        if self._interval_ns is not None and self._interval_ns != interval_ns:
            raise InvalidOptions(
                f"node {self.id} already alternates colors every {self._interval_ns} ns")
        self._interval_ns = interval_ns
        self._clock_users += 1
        if self._clock_users == 1:
            self._clock_generation += 1
            self.sync_color()
            now = self.runtime.now()
            nxt = (now // interval_ns + 1) * interval_ns
            self.runtime.call_at(nxt, self._on_boundary, self._clock_generation,
                                 label=f"switch {self.id}")

    def disarm_marking(self) -> None:
        if self._clock_users == 0:
            return
        self._clock_users -= 1
        if self._clock_users == 0:
            self._clock_generation += 1

    def add_boundary_listener(self, fn) -> None:
        self._boundary_listeners.append(fn)

    def remove_boundary_listener(self, fn) -> None:
        if fn in self._boundary_listeners:
            self._boundary_listeners.remove(fn)

    def sync_color(self) -> None:
        if self._interval_ns is None or self._clock_users == 0:
            return
        target = self.runtime.now() // self._interval_ns
        engine = self.engine
        while engine.color_state.epoch < target:
            engine.set_active_color(engine.color_state.epoch + 1)

    def _on_boundary(self, generation):
        if generation != self._clock_generation:
            return
        now = self.runtime.now()
        self.sync_color()
        deactivated = self.engine.color_state.epoch - 1
        for fn in list(self._boundary_listeners):
            fn(deactivated, now)
        self.runtime.call_at(now + self._interval_ns, self._on_boundary, generation,
                             label=f"switch {self.id}")

    # packet processing

    def _next_worker(self) -> int:
        w = self._worker_rr
        self._worker_rr = (w + 1) % self.engine.workers
        return w

    def process_packet(self, pkt: Packet) -> ForwardingDecision:
        dst = pkt.ip.dst
        if pkt.srh is None and pkt.inner is None:
            if dst == self.address or self.is_local_network(dst):
                return DeliverLocal(pkt)
            policy = self.match_policy(dst)
            if policy is not None:
                return self.process_packet(self.apply_policy_encap(pkt, policy))
            return self._route(pkt)
        local = self.local_sids.get(dst)
        if local is not None:
            return self.process_local_sid(pkt, local.behavior)
        if dst == self.address:
            return DeliverLocal(pkt)
        return self._route(pkt)

    def _route(self, pkt: Packet) -> ForwardingDecision:
        hop = self.lookup_route(pkt.ip.dst)
        if hop is None:
            return Drop("no_route", pkt)
        if pkt.ip.hop_limit <= 1:
            return Drop("hop_limit", pkt)
        ip = pkt.ip
        new_ip = type(ip)(ip.src, ip.dst, ip.traffic_class, ip.hop_limit - 1,
                          ip.payload_len, ip.next_header, ip.flow_label)
        return Forward(hop, Packet(new_ip, pkt.srh, pkt.udp, pkt.payload, pkt.inner, pkt.stamp))

    def apply_policy_encap(self, inner: Packet, policy: SrPolicy) -> Packet:
        self.sync_color()
        outer = encapsulate(inner, self.address, policy.sid_list)
        state = self.engine.color_state
        if self.engine.count_packet(policy.ingress_key, state.active_color, outer.size(),
                                    self._next_worker()):
            outer = set_color(outer, state.active_color, True)
            outer.stamp = (policy.sid_list, state.epoch)
            self.runtime.on_stamp(self, outer)
        return outer

    def process_local_sid(self, pkt: Packet, behavior: Behavior) -> ForwardingDecision:
        if behavior is Behavior.END:
            try:
                return self.process_packet(srh_advance(pkt))
            except NoSegmentsLeft:
                return Drop("malformed", pkt)
        if behavior is Behavior.END_DECAP:
            srh = pkt.srh
            if srh is None or pkt.inner is None or srh.segments_left != 0:
                return Drop("malformed", pkt)
            color, monitored = get_color(pkt)
            if monitored:
                self.engine.count_packet(FlowKey(Direction.EGRESS, srh.sid_list), color,
                                         pkt.size(), self._next_worker())
            if pkt.stamp is not None:
                self.runtime.on_egress(self, pkt)
            inner = pkt.inner
            if self.is_local_network(inner.ip.dst) or inner.ip.dst == self.address:
                return DeliverLocal(inner)
            return self.process_packet(inner)
        if behavior is Behavior.END_OP:
            if pkt.udp is None:
                return Drop("malformed", pkt)
            return Punt(pkt)
        raise AssertionError(behavior)

    # driving

    def receive(self, pkt: Packet) -> ForwardingDecision:
        decision = self.process_packet(pkt)
        self.execute(decision)
        return decision

    send = receive

    def execute(self, decision: ForwardingDecision) -> None:
        if isinstance(decision, Forward):
            self.runtime.transmit(self, decision.next_hop, decision.packet)
        elif isinstance(decision, Drop):
            self.runtime.on_drop(self, decision.packet, decision.reason)
        elif isinstance(decision, Punt):
            self._punt(decision.packet)
        else:
            self._deliver_local(decision.packet)

    def _punt(self, pkt: Packet) -> None:
        try:
            msg = decode_probe_payload(pkt)
        except (LengthError, ReservedNonZero, MalformedPacket) as exc:
            self.diagnose("bad_probe", str(exc))
            return
        handler = self._punt_handlers.get(
            (pkt.srh.sid_list, (pkt.udp.src_port, pkt.udp.dst_port)))
        if handler is None:
            self.diagnose("unknown_session", f"probe along {pkt.srh.sid_list}")
            return
        handler(msg, pkt)

    def _deliver_local(self, pkt: Packet) -> None:
        if pkt.ip.dst == self.address and pkt.udp is not None:
            handlers = self._oob_handlers.get((pkt.udp.src_port, pkt.udp.dst_port))
            if handlers:
                try:
                    msg = decode_probe_payload(pkt)
                except (LengthError, ReservedNonZero) as exc:
                    self.diagnose("bad_probe", str(exc))
                    return
                if isinstance(msg, LmResponse):
                    for agent in handlers:
                        if agent.expects(msg.sender_seq):
                            agent.handle_probe(msg, pkt)
                            return
                    self.diagnose("unmatched_seq", f"out-of-band seq {msg.sender_seq}")
                    return
        self.runtime.deliver(self, pkt)

    def register_punt(self, sids: SidList, ports: tuple[int, int], handler) -> None:
        """Probes are dispatched by their SID list and (src, dst) UDP ports."""
        if (sids, ports) in self._punt_handlers:
            raise AlreadyRunning(f"{self.id}: probes along {sids} ports {ports} already handled")
        self._punt_handlers[sids, ports] = handler

    def unregister_punt(self, sids: SidList, ports: tuple[int, int]) -> None:
        self._punt_handlers.pop((sids, ports), None)

    def register_oob(self, ports: tuple[int, int], agent) -> None:
        self._oob_handlers.setdefault(ports, []).append(agent)

    def unregister_oob(self, ports: tuple[int, int], agent) -> None:
        handlers = self._oob_handlers.get(ports, [])
        if agent in handlers:
            handlers.remove(agent)


# TWAMP-light loss measurement agents

@dataclass
class LossSample:
    """A cumulative (tx, rx) pair for one block, as seen by the sender."""

    measure_id: int
    direction: str  # "forward" | "reverse"
    epoch: int
    color: Color
    tx: int
    rx: int
    sender_seq: int
    sent_at: int
    received_at: int
    flags: tuple[str, ...] = ()


@dataclass
class PendingQuery:
    block: int
    tx: int
    sent_at: int
    attempt: int


@dataclass(frozen=True)
class ProbeLogEntry:
    """Reflector-side record of one received query."""

    measure_id: int
    sender_seq: int
    epoch: int
    arrived_at: int
    early: bool = False


def _snapshot(engine: CountingEngine, key: FlowKey, epoch: int) -> CounterSnapshot | None:
    if not engine.is_monitored(key):
        return None
    return engine.read_counters(key, Color.of_epoch(epoch))


class SenderAgent:
    """Session Sender: reads the inactive TX counter after the settle margin,
    sends the LM query along the monitored path, and turns responses into
    cumulative loss samples."""

    SNAPSHOT_HISTORY = 32

    def __init__(self, node: Node, measure_id: int, sdlist: SidList, sdlistreverse: SidList,
                 reflector_punt_sid, ports: tuple[int, int], *, margin_ns: int,
                 in_band: bool = True, on_sample=None, retry_interval_ns: int | None = None,
                 max_retries: int = 64):
        if node.punt_sid is None and in_band:
            raise InvalidOptions(f"node {node.id} has no End.OP SID for in-band responses")
        self.node = node
        self.measure_id = measure_id
        self.sdlist = sdlist
        self.sdlistreverse = sdlistreverse
        self.reflector_punt_sid = parse_sid(reflector_punt_sid)
        self.ss_port, self.refl_port = ports
        self.margin_ns = margin_ns
        self.in_band = in_band
        self.on_sample = on_sample
        self.retry_interval_ns = retry_interval_ns
        self.max_retries = max_retries
        self.next_seq = 0
        self.pending: dict[int, PendingQuery] = {}
        self.answered: set[int] = set()
        self.running = True
        self.fwd_key = FlowKey(Direction.INGRESS, sdlist)
        self.rev_key = FlowKey(Direction.EGRESS, sdlistreverse)
        self._rev_rx: dict[int, CounterSnapshot] = {}
        self.response_sids = (sdlistreverse.with_last(node.punt_sid)
                              if node.punt_sid is not None else None)

    def arm(self) -> None:
        self.node.add_boundary_listener(self.on_boundary)
        if self.in_band:
            self.node.register_punt(self.response_sids, (self.refl_port, self.ss_port),
                                    self.handle_probe)
        self.node.register_oob((self.refl_port, self.ss_port), self)

    def disarm(self) -> None:
        self.running = False
        self.pending.clear()
        self.node.remove_boundary_listener(self.on_boundary)
        if self.in_band:
            self.node.unregister_punt(self.response_sids, (self.refl_port, self.ss_port))
        self.node.unregister_oob((self.refl_port, self.ss_port), self)

    def expects(self, seq: int) -> bool:
        return seq in self.pending

    def on_boundary(self, deactivated_epoch: int, at_ns: int) -> None:
        if deactivated_epoch < 0:
            return
        self.node.runtime.call_at(at_ns + self.margin_ns, self.on_settle, deactivated_epoch,
                                  label=f"settle {self.node.id} m{self.measure_id}")

    def on_settle(self, epoch: int) -> None:
        if not self.running:
            return
        self.node.sync_color()
        if self.in_band:
            snap = _snapshot(self.node.engine, self.rev_key, epoch)
            if snap is not None:
                self._rev_rx[epoch] = snap
                self._rev_rx.pop(epoch - self.SNAPSHOT_HISTORY, None)
        self.send_query(epoch)

    def emit_query(self, block: int, tx: int | None = None) -> Packet:
        """Build the next query for ``block`` and record it as pending."""
        if not self.running:
            raise SessionStopped(f"measure {self.measure_id} is stopped")
        if tx is None:
            tx = self.node.engine.read_counters(self.fwd_key, Color.of_epoch(block)).packets
        seq = self.next_seq
        self.next_seq = (seq + 1) & 0xFFFFFFFF
        attempt = sum(1 for p in self.pending.values() if p.block == block)
        q = LmQuery(seq, tx, block & 0xFF, 0, CTRL_IN_BAND if self.in_band else CTRL_OUT_OF_BAND)
        self.pending[seq] = PendingQuery(block, tx, self.node.runtime.now(), attempt)
        return build_probe_packet("query", q, self.sdlist, self.reflector_punt_sid,
                                  (self.ss_port, self.refl_port), self.node.address)

    def send_query(self, block: int, tx: int | None = None) -> None:
        pkt = self.emit_query(block, tx)
        self.node.send(pkt)
        if self.retry_interval_ns:
            self.node.runtime.call_at(self.node.runtime.now() + self.retry_interval_ns,
                                      self._retry, block,
                                      label=f"retry {self.node.id} m{self.measure_id}")

    def _retry(self, block: int) -> None:
        if not self.running or block in self.answered:
            return
        attempts = [p for p in self.pending.values() if p.block == block]
        if not attempts:
            return
        if len(attempts) > self.max_retries:
            self.node.diagnose("query_timeout", f"measure {self.measure_id} block {block}")
            for seq in [s for s, p in self.pending.items() if p.block == block]:
                del self.pending[seq]
            return
        self.send_query(block, attempts[0].tx)

    def handle_probe(self, msg, pkt: Packet) -> None:
        if not isinstance(msg, LmResponse):
            self.node.diagnose("unexpected_probe", f"query at sender m{self.measure_id}")
            return
        try:
            self.on_response(msg)
        except UnmatchedSeq as exc:
            self.node.diagnose("unmatched_seq", str(exc))

    def on_response(self, r: LmResponse) -> tuple[LossSample, LossSample | None]:
        pending = self.pending.get(r.sender_seq)
        if pending is None or not self.running:
            raise UnmatchedSeq(f"measure {self.measure_id}: no pending query {r.sender_seq}")
        if r.sender_block_number != pending.block & 0xFF or r.sender_tx_counter != pending.tx:
            raise UnmatchedSeq(f"measure {self.measure_id}: response {r.sender_seq} does not echo its query")
        block = pending.block
        for seq in [s for s, p in self.pending.items() if p.block == block]:
            del self.pending[seq]
        self.answered.add(block)
        now = self.node.runtime.now()
        forward = LossSample(self.measure_id, "forward", block, Color.of_epoch(block),
                             r.sender_tx_counter, r.reflector_rx_counter, r.sender_seq,
                             pending.sent_at, now)
        reverse = None
        if r.in_band and self.in_band:
            epoch = resolve_epoch(r.reflector_block_number, block)
            flags = ()
            snap = self._rev_rx.get(epoch)
            if snap is None:
                snap = _snapshot(self.node.engine, self.rev_key, epoch)
                if snap is not None and snap.active_read:
                    flags = ("active_read",)
            if snap is None:
                self.node.diagnose("reverse_not_monitored", str(self.rev_key))
            else:
                reverse = LossSample(self.measure_id, "reverse", epoch, Color.of_epoch(epoch),
                                     r.reflector_tx_counter, snap.packets, r.sender_seq,
                                     pending.sent_at, now, flags)
        if self.on_sample is not None:
            self.on_sample(forward)
            if reverse is not None:
                self.on_sample(reverse)
        return forward, reverse


class ReflectorAgent:
    """Session Reflector: settles its egress RX (and return-path TX) counters
    after the margin and answers each well-formed query exactly once."""

    SNAPSHOT_HISTORY = 32

    def __init__(self, node: Node, measure_id: int, sdlist: SidList, sdlistreverse: SidList,
                 sender_punt_sid, ports: tuple[int, int], *, margin_ns: int):
        if node.punt_sid is None:
            raise InvalidOptions(f"node {node.id} has no End.OP SID to receive queries")
        self.node = node
        self.measure_id = measure_id
        self.sdlist = sdlist
        self.sdlistreverse = sdlistreverse
        self.sender_punt_sid = parse_sid(sender_punt_sid) if sender_punt_sid else None
        self.ss_port, self.refl_port = ports
        self.margin_ns = margin_ns
        self.next_seq = 0
        self.running = True
        self.rx_key = FlowKey(Direction.EGRESS, sdlist)
        self.tx_key = FlowKey(Direction.INGRESS, sdlistreverse)
        self.query_sids = sdlist.with_last(node.punt_sid)
        self._rx: dict[int, CounterSnapshot] = {}
        self._tx: dict[int, CounterSnapshot] = {}
        self.probe_log: list[ProbeLogEntry] = []

    def arm(self) -> None:
        self.node.add_boundary_listener(self.on_boundary)
        self.node.register_punt(self.query_sids, (self.ss_port, self.refl_port), self.handle_probe)

    def disarm(self) -> None:
        self.running = False
        self.node.remove_boundary_listener(self.on_boundary)
        self.node.unregister_punt(self.query_sids, (self.ss_port, self.refl_port))

    def on_boundary(self, deactivated_epoch: int, at_ns: int) -> None:
        if deactivated_epoch < 0:
            return
        self.node.runtime.call_at(at_ns + self.margin_ns, self.on_settle, deactivated_epoch,
                                  label=f"settle {self.node.id} r{self.measure_id}")

    def on_settle(self, epoch: int) -> None:
        if not self.running:
            return
        self.node.sync_color()
        for store, key in ((self._rx, self.rx_key), (self._tx, self.tx_key)):
            snap = _snapshot(self.node.engine, key, epoch)
            if snap is not None:
                store[epoch] = snap
                store.pop(epoch - self.SNAPSHOT_HISTORY, None)

    def _read(self, store, key, epoch):
        snap = store.get(epoch)
        if snap is not None:
            return snap, False
        snap = _snapshot(self.node.engine, key, epoch)
        return snap, True

    def handle_probe(self, msg, pkt: Packet) -> None:
        if not isinstance(msg, LmQuery):
            self.node.diagnose("unexpected_probe", f"response at reflector r{self.measure_id}")
            return
        if pkt.udp.dst_port != self.refl_port or pkt.udp.src_port != self.ss_port:
            self.node.diagnose("port_mismatch", f"r{self.measure_id}")
            return
        try:
            response = self.on_query(msg, pkt)
        except UnknownSession as exc:
            self.node.diagnose("unknown_session", str(exc))
            return
        if msg.in_band:
            self.node.send(response)
        else:
            self.node.runtime.send_out_of_band(self.node, pkt.ip.src, response)

    def on_query(self, q: LmQuery, pkt: Packet) -> Packet:
        """Answer ``q``; returns the response packet (in-band probe or plain UDP)."""
        if not self.running:
            raise UnknownSession(f"reflector r{self.measure_id} is stopped")
        self.node.sync_color()
        epoch = resolve_epoch(q.block_number, self.node.engine.color_state.epoch)
        rx, early = self._read(self._rx, self.rx_key, epoch)
        if rx is None:
            raise UnknownSession(f"flow {self.rx_key} is not monitored")
        if early:
            self.node.diagnose("early_query", f"r{self.measure_id} block {epoch}")
        self.probe_log.append(ProbeLogEntry(self.measure_id, q.sender_seq, epoch,
                                            self.node.runtime.now(), early))
        if q.in_band:
            tx, _ = self._read(self._tx, self.tx_key, epoch)
            seq = self.next_seq
            self.next_seq = (seq + 1) & 0xFFFFFFFF
            r = LmResponse(q.sender_seq, q.sender_tx_counter, q.block_number, rx.packets,
                           seq, tx.packets if tx is not None else 0, epoch & 0xFF,
                           q.flags, q.ctrl_code)
            if self.sender_punt_sid is None:
                raise UnknownSession(f"r{self.measure_id}: no sender punt SID for in-band reply")
            return build_probe_packet("response", r, self.sdlistreverse, self.sender_punt_sid,
                                      (self.refl_port, self.ss_port), self.node.address)
        r = LmResponse(q.sender_seq, q.sender_tx_counter, q.block_number, rx.packets,
                       flags=q.flags, ctrl_code=q.ctrl_code)
        return make_udp_packet(self.node.address, pkt.ip.src, self.refl_port, self.ss_port,
                               encode_lm_response(r))
