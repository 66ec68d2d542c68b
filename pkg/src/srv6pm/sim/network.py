"""The simulated network: nodes wired by lossy FIFO links, driven by the event
scheduler, provisioned and monitored through the controller."""

from __future__ import annotations

import hashlib
import logging
import random
from collections import defaultdict
from dataclasses import dataclass
from ipaddress import IPv6Network
from pathlib import Path

import networkx as nx

from ..control.controller import Controller, InProcessChannel
from ..control.messages import (
    ColorOptions,
    ReflectorOptions,
    SenderOptions,
    SRv6Behavior,
    SRv6ManagerRequest,
    SRv6Path,
)
from ..control.southbound import SRv6PMService
from ..dataplane import Node
from ..errors import ValidationError
from ..packet import Packet, SidList, make_udp_packet, parse_sid
from .oracle import DropOracle
from .scenario import ScenarioConfig, parse_scenario, seconds_to_ns, validate
from .scheduler import EventScheduler

log = logging.getLogger(__name__)


def link_seed(seed: int, a: str, b: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{a}->{b}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class Link:
    """One direction of a link. Loss and jitter come from a generator seeded by
    (scenario seed, link id), so links never perturb each other's draws."""

    def __init__(self, a: str, b: str, delay_ns: int, loss_rate: float, seed: int,
                 jitter_ns: int = 0):
        self.a, self.b = a, b
        self.delay_ns = delay_ns
        self.loss_rate = loss_rate
        self.jitter_ns = jitter_ns
        self.rng = random.Random(link_seed(seed, a, b))
        self._last_arrival = 0
        self.sent = 0
        self.dropped = 0

    def transmit(self, now: int) -> int | None:
        """Arrival time for a packet entering the link at ``now``, or None if lost."""
        self.sent += 1
        if self.loss_rate and self.rng.random() < self.loss_rate:
            self.dropped += 1
            return None
        arrival = now + self.delay_ns
        if self.jitter_ns:
            arrival += self.rng.randrange(self.jitter_ns + 1)
            # FIFO: never overtake the previous packet
            arrival = max(arrival, self._last_arrival)
        self._last_arrival = arrival
        return arrival


@dataclass
class FlowStats:
    emitted: int = 0
    delivered: int = 0


class Simulation:
    """A loaded scenario. Acts as the runtime for every node."""

    def __init__(self, config: ScenarioConfig):
        self.config = validate(config)
        self.scheduler = EventScheduler()
        self.oracle = DropOracle()
        self.controller = Controller()
        self.nodes: dict[str, Node] = {}
        self.pm: dict[str, SRv6PMService] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.graph = nx.Graph()
        self.flow_stats: dict[int, FlowStats] = defaultdict(FlowStats)
        self.host_deliveries = 0
        self.drops_by_reason: dict[str, int] = defaultdict(int)
        self.oob_delay_ns = seconds_to_ns(config.oob_delay)
        self._by_address = {}
        self._started = False
        self._stopped = False
        self._build()

    # construction

    def _build(self):
        cfg = self.config
        for spec in cfg.nodes:
            node = Node(spec.id, spec.address, locator=spec.locator or None,
                        networks=spec.networks, workers=cfg.workers, runtime=self)
            self.nodes[spec.id] = node
            self._by_address[node.address] = node
            self.graph.add_node(spec.id)
            self.pm[spec.id] = SRv6PMService(node)
            self.controller.register_node(spec.id, InProcessChannel(node, self.pm[spec.id]))
        for spec in cfg.links:
            delay, jitter = seconds_to_ns(spec.delay), seconds_to_ns(spec.jitter)
            self.links[spec.a, spec.b] = Link(spec.a, spec.b, delay, spec.loss_rate, cfg.seed, jitter)
            self.links[spec.b, spec.a] = Link(spec.b, spec.a, delay, spec.loss_rate, cfg.seed, jitter)
            self.graph.add_edge(spec.a, spec.b, delay=spec.delay, loss_rate=spec.loss_rate)
        self._install_routes()
        self._provision()

    def _install_routes(self):
        """Static shortest-path (hop count) routes to every locator and host network."""
        paths = dict(nx.all_pairs_shortest_path(self.graph))
        for src, node in self.nodes.items():
            for dst, other in self.nodes.items():
                if dst == src or dst not in paths.get(src, {}):
                    continue
                hop = paths[src][dst][1]
                prefixes = [other.locator, *other.networks]
                if other.address not in other.locator:
                    prefixes.append(IPv6Network(f"{other.address}/128"))
                for prefix in prefixes:
                    node.add_route(prefix, hop)

    def _provision(self):
        cfg = self.config
        by_node = defaultdict(list)
        for ls in cfg.local_sids:
            by_node[ls.node].append(SRv6Behavior(ls.sid, ls.action))
        for spec in cfg.nodes:
            if spec.punt_sid and not any(b.segment == spec.punt_sid for b in by_node[spec.id]):
                by_node[spec.id].append(SRv6Behavior(spec.punt_sid, "End.OP"))
        for node_id, behaviors in by_node.items():
            self.controller.srv6_manager_apply(
                "Create", node_id, SRv6ManagerRequest("behavior", behaviors=behaviors))
        paths = defaultdict(list)
        for p in cfg.policies:
            paths[p.node].append(SRv6Path(p.destination, list(p.sid_list)))
        for node_id, plist in paths.items():
            self.controller.srv6_manager_apply(
                "Create", node_id, SRv6ManagerRequest("path", paths=plist))

    # runtime interface used by nodes

    def now(self) -> int:
        return self.scheduler.now

    def call_at(self, t_ns, fn, *args, label=""):
        self.scheduler.call_at(t_ns, fn, *args, label=label)

    def transmit(self, node: Node, next_hop: str, pkt: Packet) -> None:
        link = self.links.get((node.id, next_hop))
        if link is None:
            self.on_drop(node, pkt, "no_link")
            return
        arrival = link.transmit(self.scheduler.now)
        if arrival is None:
            self.on_drop(node, pkt, "link_loss")
            return
        self.scheduler.call_at(arrival, self.nodes[next_hop].receive, pkt,
                               label=f"rx {next_hop}")

    def send_out_of_band(self, node: Node, dst, pkt: Packet) -> None:
        target = self._by_address.get(parse_sid(dst))
        if target is None:
            self.on_drop(node, pkt, "oob_unreachable")
            return
        self.scheduler.call_at(self.scheduler.now + self.oob_delay_ns, target.receive, pkt,
                               label=f"oob {target.id}")

    def deliver(self, node: Node, pkt: Packet) -> None:
        self.host_deliveries += 1
        if pkt.payload[:4] and len(pkt.payload) >= 4:
            flow_index = int.from_bytes(pkt.payload[:4], "big")
            self.flow_stats[flow_index].delivered += 1

    def on_stamp(self, node: Node, pkt: Packet) -> None:
        self.oracle.on_sent(pkt.stamp)

    def on_egress(self, node: Node, pkt: Packet) -> None:
        self.oracle.on_delivered(pkt.stamp)

    def on_drop(self, node: Node, pkt: Packet, reason: str) -> None:
        self.drops_by_reason[reason] += 1
        if pkt.stamp is not None:
            self.oracle.on_drop(pkt.stamp, reason)

    # traffic

    def _host_address(self, node_id: str, explicit: str):
        if explicit:
            return parse_sid(explicit)
        net = self.nodes[node_id].networks[0]
        return net.network_address + 0x100

    def _schedule_traffic(self):
        horizon = seconds_to_ns(self.config.duration)
        for index, flow in enumerate(self.config.traffic):
            start = seconds_to_ns(flow.start)
            duration = seconds_to_ns(flow.duration) if flow.duration is not None else horizon - start
            count = max(0, round(flow.rate * duration / 1e9))
            if count == 0:
                continue
            period = duration / count
            src = self._host_address(flow.src, flow.src_addr)
            dst = self._host_address(flow.dst, flow.dst_addr)
            self.scheduler.call_at(start, self._emit, index, 0, count, start, period, src, dst,
                                   label=f"tx f{index}")

    def _emit(self, index, i, count, start, period, src, dst):
        flow = self.config.traffic[index]
        payload = index.to_bytes(4, "big") + i.to_bytes(4, "big")
        payload += bytes(max(0, flow.size - len(payload)))
        pkt = make_udp_packet(src, dst, flow.src_port, flow.dst_port, payload)
        self.flow_stats[index].emitted += 1
        self.nodes[flow.src].receive(pkt)
        if i + 1 < count:
            self.scheduler.call_at(start + round((i + 1) * period), self._emit, index, i + 1,
                                   count, start, period, src, dst, label=f"tx f{index}")

    # sessions

    def _start_sessions(self):
        for s in self.config.sessions:
            colors = ColorOptions(s.interval, s.margin)
            so = SenderOptions(s.ss_udp_port, s.refl_udp_port)
            ro = ReflectorOptions(s.ss_udp_port, s.refl_udp_port)
            self.controller.start_flow_monitoring(
                s.measure_id, s.sender, s.reflector, SidList(s.sdlist), SidList(s.sdlistreverse),
                sender_options=so, reflector_options=ro, color_options=colors,
                response_mode=s.response_mode)
        intervals = sorted({seconds_to_ns(s.interval) for s in self.config.sessions})
        if intervals:
            self.scheduler.call_at(intervals[0], self._poll, intervals[0], label="poll")

    def _poll(self, every):
        self.controller.poll()
        if not self._stopped:
            self.scheduler.call_at(self.scheduler.now + every, self._poll, every, label="poll")

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self._start_sessions()
        self._schedule_traffic()

    # running

    def run_until(self, t_end_ns: int) -> Simulation:
        self.start()
        if t_end_ns > self.scheduler.now:
            self.scheduler.run_until(t_end_ns)
        return self

    def pending_queries(self) -> int:
        total = 0
        for pm in self.pm.values():
            for session in pm.sessions.values():
                if session.state == "running" and session.role == "sender":
                    total += len(session.agent.pending)
        return total

    def max_interval_ns(self) -> int:
        return max((seconds_to_ns(s.interval) for s in self.config.sessions), default=0)

    def run(self, until: float | None = None, drain_cap: float | None = None) -> Simulation:
        """Run traffic until ``until`` (default: scenario duration), let the last
        block settle and its queries complete, then stop every session."""
        end = seconds_to_ns(self.config.duration if until is None else until)
        interval = self.max_interval_ns()
        self.run_until(end + interval)
        cap = self.scheduler.now + (seconds_to_ns(drain_cap) if drain_cap is not None
                                    else 2 * interval or seconds_to_ns(1))
        step = max(1, interval // 20) if interval else seconds_to_ns(0.05)
        while self.pending_queries() and self.scheduler.now < cap:
            self.run_until(min(cap, self.scheduler.now + step))
        self.finish()
        return self

    def finish(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        for measure_id, session in sorted(self.controller.sessions.items()):
            if session.state == "running":
                self.controller.stop_flow_monitoring(measure_id)
        self.controller.poll()

    # results

    def reports(self):
        out = []
        for measure_id in sorted(self.controller.sessions):
            out.extend(self.controller.sessions[measure_id].records)
        return out

    def trace_digest(self) -> str:
        return self.scheduler.trace_digest()

    def state_digest(self) -> str:
        """Digest of counters, oracle and records; equal for equal final states."""
        h = hashlib.blake2b(digest_size=16)
        for node_id in sorted(self.nodes):
            engine = self.nodes[node_id].engine
            h.update(f"{node_id}:{engine.color_state.epoch};".encode())
        for (sids, epoch), t in sorted(self.oracle.blocks.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
            h.update(f"{sids}:{epoch}:{t.sent}:{t.delivered}:{t.drops};".encode())
        for r in self.reports():
            h.update(repr(r.to_dict()).encode())
        h.update(f"now={self.scheduler.now};deliv={self.host_deliveries}".encode())
        return h.hexdigest()


def load_scenario(source) -> Simulation:
    """Build a Simulation from a ScenarioConfig, YAML text, or a path."""
    if isinstance(source, ScenarioConfig):
        return Simulation(source)
    if isinstance(source, Path):
        source = source.read_text()
    if not isinstance(source, str):
        raise ValidationError(f"cannot load a scenario from {type(source).__name__}")
    return Simulation(parse_scenario(source))
