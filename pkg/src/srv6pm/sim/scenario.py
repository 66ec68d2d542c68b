"""Scenario configuration: a YAML tree describing nodes, links, SRv6 state,
traffic and monitoring sessions.

Times are seconds in the file and integer nanoseconds once loaded. Top-level
keys::

    seed, duration, oob_delay, workers,
    nodes:      [{id, address, locator, networks, punt_sid}]
    links:      [{a, b, delay, loss_rate, jitter}]
    local_sids: [{node, sid, action}]
    policies:   [{node, destination, sid_list}]
    traffic:    [{src, dst, rate, start, duration, size, src_port, dst_port}]
    sessions:   [{measure_id, sender, reflector, sdlist, sdlistreverse,
                  interval, margin, response_mode, ss_udp_port, refl_udp_port}]
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from ipaddress import IPv6Address, IPv6Network

import yaml

from ..errors import InvalidSidList, ParseError, ValidationError
from ..packet import SidList, parse_sid

NS = 1_000_000_000


def seconds_to_ns(value: float) -> int:
    return round(float(value) * NS)


@dataclass
class NodeSpec:
    id: str
    address: str
    locator: str = ""
    networks: list[str] = field(default_factory=list)
    punt_sid: str = ""


@dataclass
class LinkSpec:
    a: str
    b: str
    delay: float = 0.001
    loss_rate: float = 0.0
    jitter: float = 0.0


@dataclass
class LocalSidSpec:
    node: str
    sid: str
    action: str


@dataclass
class PolicySpec:
    node: str
    destination: str
    sid_list: list[str]


@dataclass
class FlowSpec:
    src: str
    dst: str
    rate: float = 100.0
    start: float = 0.0
    duration: float | None = None  # None: until the scenario duration
    size: int = 64
    src_port: int = 40000
    dst_port: int = 40001
    src_addr: str = ""
    dst_addr: str = ""


@dataclass
class SessionSpec:
    measure_id: int
    sender: str
    reflector: str
    sdlist: list[str]
    sdlistreverse: list[str]
    interval: float = 10.0
    margin: float = 0.0  # 0: interval / 2
    response_mode: str = "in_band"
    ss_udp_port: int = 50000
    refl_udp_port: int = 50001


@dataclass
class ScenarioConfig:
    nodes: list[NodeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    local_sids: list[LocalSidSpec] = field(default_factory=list)
    policies: list[PolicySpec] = field(default_factory=list)
    traffic: list[FlowSpec] = field(default_factory=list)
    sessions: list[SessionSpec] = field(default_factory=list)
    seed: int = 0
    duration: float = 60.0
    oob_delay: float = 0.001
    workers: int = 1
    name: str = ""

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ValidationError(f"unknown node {node_id!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if not d["name"]:
            del d["name"]
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=100)

    def validate(self) -> ScenarioConfig:
        validate(self)
        return self


_SECTIONS = {
    "nodes": NodeSpec,
    "links": LinkSpec,
    "local_sids": LocalSidSpec,
    "policies": PolicySpec,
    "traffic": FlowSpec,
    "sessions": SessionSpec,
}
_SCALARS = {"seed": int, "duration": float, "oob_delay": float, "workers": int, "name": str}


def _build(cls, item, where: str):
    if not isinstance(item, dict):
        raise ParseError(f"{where}: expected a mapping, got {type(item).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(item) - names
    if unknown:
        raise ParseError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**item)
    except TypeError as exc:
        raise ParseError(f"{where}: {exc}") from None


def from_dict(doc) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a mapping at top level")
    unknown = set(doc) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ParseError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for key, cls in _SECTIONS.items():
        items = doc.get(key) or []
        if not isinstance(items, list):
            raise ParseError(f"{key}: expected a list")
        kwargs[key] = [_build(cls, item, f"{key}[{i}]") for i, item in enumerate(items)]
    for key, conv in _SCALARS.items():
        if key in doc and doc[key] is not None:
            try:
                kwargs[key] = conv(doc[key])
            except (TypeError, ValueError):
                raise ParseError(f"{key}: cannot convert {doc[key]!r}") from None
    return ScenarioConfig(**kwargs)


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse and validate scenario YAML."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from None
    return validate(from_dict(doc if doc is not None else {}))


def _sid_list(value, where) -> SidList:
    try:
        return SidList(value)
    except (InvalidSidList, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _address(value, where) -> IPv6Address:
    try:
        return parse_sid(value)
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _number(value, where, low=None, high=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where} must be a number, got {value!r}")
    if low is not None and value < low:
        raise ValidationError(f"{where} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ValidationError(f"{where} must be <= {high}, got {value}")


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    ids = [n.id for n in cfg.nodes]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate node ids")
    known = set(ids)

    def need(node_id, where):
        if node_id not in known:
            raise ValidationError(f"{where}: unknown node {node_id!r}")

    addresses = set()
    for n in cfg.nodes:
        addr = _address(n.address, f"node {n.id} address")
        if addr in addresses:
            raise ValidationError(f"node {n.id}: duplicate address {addr}")
        addresses.add(addr)
        try:
            if n.locator:
                IPv6Network(n.locator)
            for net in n.networks:
                IPv6Network(net)
        except ValueError as exc:
            raise ValidationError(f"node {n.id}: {exc}") from None
        if n.punt_sid:
            _address(n.punt_sid, f"node {n.id} punt_sid")
    pairs = set()
    for i, link in enumerate(cfg.links):
        where = f"links[{i}]"
        need(link.a, where)
        need(link.b, where)
        if link.a == link.b:
            raise ValidationError(f"{where}: self-loop on {link.a}")
        pair = frozenset((link.a, link.b))
        if pair in pairs:
            raise ValidationError(f"{where}: duplicate link {link.a}-{link.b}")
        pairs.add(pair)
        _number(link.delay, f"{where}.delay", 0)
        _number(link.loss_rate, f"{where}.loss_rate", 0, 1)
        _number(link.jitter, f"{where}.jitter", 0)
    for i, ls in enumerate(cfg.local_sids):
        need(ls.node, f"local_sids[{i}]")
        _address(ls.sid, f"local_sids[{i}].sid")
    for i, p in enumerate(cfg.policies):
        need(p.node, f"policies[{i}]")
        try:
            IPv6Network(p.destination)
        except ValueError as exc:
            raise ValidationError(f"policies[{i}].destination: {exc}") from None
        _sid_list(p.sid_list, f"policies[{i}].sid_list")
    for i, f in enumerate(cfg.traffic):
        where = f"traffic[{i}]"
        need(f.src, where)
        need(f.dst, where)
        _number(f.rate, f"{where}.rate")
        if not f.rate > 0:
            raise ValidationError(f"{where}.rate must be > 0, got {f.rate}")
        _number(f.start, f"{where}.start", 0)
        if f.duration is not None:
            _number(f.duration, f"{where}.duration", 0)
        if not isinstance(f.size, int) or f.size < 0:
            raise ValidationError(f"{where}.size must be a non-negative integer")
        for end, addr in (("src", f.src_addr), ("dst", f.dst_addr)):
            if addr:
                _address(addr, f"{where}.{end}_addr")
            elif not cfg.node(getattr(f, end)).networks:
                raise ValidationError(f"{where}: node {getattr(f, end)} has no host network")
    measure_ids = set()
    for i, s in enumerate(cfg.sessions):
        where = f"sessions[{i}]"
        need(s.sender, where)
        need(s.reflector, where)
        if s.measure_id in measure_ids:
            raise ValidationError(f"{where}: duplicate measure_id {s.measure_id}")
        measure_ids.add(s.measure_id)
        _sid_list(s.sdlist, f"{where}.sdlist")
        _sid_list(s.sdlistreverse, f"{where}.sdlistreverse")
        _number(s.interval, f"{where}.interval")
        _number(s.margin, f"{where}.margin", 0)
        margin = s.margin or s.interval / 2
        if not 0 < margin < s.interval:
            raise ValidationError(f"{where}: margin must lie strictly between 0 and interval")
    _number(cfg.duration, "duration", 0)
    _number(cfg.oob_delay, "oob_delay", 0)
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ValidationError("workers must be a positive integer")
    return cfg


# Conventional addressing used by the builder: node i owns fcbb:0:i::/48 and
# hosts in fd00:0:i::/48.

def node_address(i: int) -> str:
    return f"fcbb:0:{i:x}::1"


def end_sid(i: int) -> str:
    return f"fcbb:0:{i:x}::e"


def decap_sid(i: int, ingress: int | None = None) -> str:
    """End.DT6 SID of node ``i``; one per ingress node when ``ingress`` is given."""
    if ingress is None:
        return f"fcbb:0:{i:x}::d6"
    return f"fcbb:0:{i:x}::d6:{ingress:x}"


def op_sid(i: int) -> str:
    return f"fcbb:0:{i:x}::f0"


def host_network(i: int) -> str:
    return f"fd00:0:{i:x}::/48"


class ScenarioBuilder:
    """Assembles a ScenarioConfig from node names, links and waypoint paths."""

    def __init__(self, *, seed: int = 0, duration: float = 60.0, name: str = ""):
        self.cfg = ScenarioConfig(seed=seed, duration=duration, name=name)
        self._index: dict[str, int] = {}
        self._next_measure = 1

    def node(self, name: str) -> str:
        if name in self._index:
            return name
        i = len(self._index) + 1
        self._index[name] = i
        self.cfg.nodes.append(NodeSpec(name, node_address(i), f"fcbb:0:{i:x}::/48",
                                       [host_network(i)], op_sid(i)))
        self.cfg.local_sids += [LocalSidSpec(name, end_sid(i), "End"),
                                LocalSidSpec(name, decap_sid(i), "End.DT6"),
                                LocalSidSpec(name, op_sid(i), "End.OP")]
        return name

    def link(self, a: str, b: str, *, delay: float = 0.001, loss_rate: float = 0.0,
             jitter: float = 0.0) -> None:
        self.node(a)
        self.node(b)
        self.cfg.links.append(LinkSpec(a, b, delay, loss_rate, jitter))

    def sid_list(self, waypoints, dst: str, src: str) -> list[str]:
        """Waypoint End SIDs followed by a decap SID the egress reserves for
        ``src``, so flows from different ingresses never share a SID list."""
        decap = decap_sid(self._index[dst], self._index[src])
        if not any(ls.sid == decap for ls in self.cfg.local_sids):
            self.cfg.local_sids.append(LocalSidSpec(dst, decap, "End.DT6"))
        return [end_sid(self._index[w]) for w in waypoints] + [decap]

    def flow(self, src: str, dst: str, waypoints=(), *, rate: float = 100.0, size: int = 64,
             start: float = 0.0, duration: float | None = None) -> list[str]:
        sids = self.sid_list(waypoints, dst, src)
        self.cfg.policies.append(PolicySpec(src, host_network(self._index[dst]), sids))
        self.cfg.traffic.append(FlowSpec(src, dst, rate, start, duration, size))
        return sids

    def monitored_pair(self, a: str, b: str, waypoints=(), *, rate: float = 100.0,
                       size: int = 64, interval: float = 10.0, margin: float = 0.0,
                       response_mode: str = "in_band", reverse_rate: float | None = None):
        """Traffic both ways along symmetric waypoints and one session (sender ``a``)."""
        fwd = self.flow(a, b, waypoints, rate=rate, size=size)
        rev = self.flow(b, a, tuple(reversed(waypoints)),
                        rate=rate if reverse_rate is None else reverse_rate, size=size)
        # distinct UDP ports per session keep probe dispatch unambiguous
        ss_port = 50000 + 2 * (self._next_measure - 1)
        session = SessionSpec(self._next_measure, a, b, fwd, rev, interval, margin,
                              response_mode, ss_port, ss_port + 1)
        self._next_measure += 1
        self.cfg.sessions.append(session)
        return session

    def build(self) -> ScenarioConfig:
        return validate(self.cfg)
