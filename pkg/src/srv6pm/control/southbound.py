"""Node-side southbound services: SRv6Manager (entity CRUD) and SRv6PM
(monitoring session lifecycle).

Each service method takes a request message and returns a reply message
carrying a ``StatusCode``; errors never escape as exceptions. The controller
reaches these methods through a channel (see ``controller.InProcessChannel``).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from ipaddress import IPv6Network

from ..counting import Direction, FlowKey
from ..dataplane import Behavior, LocalSid, Node, ReflectorAgent, SenderAgent, SrPolicy
from ..errors import (
    AlreadyExists,
    AlreadyRunning,
    InvalidOptions,
    InvalidSidList,
    NotFound,
    NotRunning,
    Srv6PmError,
    StaleSample,
    UnknownSession,
)
from ..packet import SidList, parse_sid
from .loss import FORWARD, REVERSE, LossTracker
from .messages import (
    FlowMonitoringDataResponse,
    ProbeLogRecord,
    RESPONSE_MODES,
    RetriveFlowMonitoringDataRequest,
    SRv6Behavior,
    SRv6ManagerReply,
    SRv6ManagerRequest,
    SRv6Path,
    StartFlowMonitoringReflectorReply,
    StartFlowMonitoringReflectorRequest,
    StartFlowMonitoringSenderReply,
    StartFlowMonitoringSenderRequest,
    StatusCode,
    StopFlowMonitoringReply,
    StopFlowMonitoringRequest,
)

log = logging.getLogger(__name__)

_STATUS = [
    (NotFound, StatusCode.STATUS_NOT_FOUND),
    (AlreadyExists, StatusCode.STATUS_ALREADY_EXISTS),
    (AlreadyRunning, StatusCode.STATUS_ALREADY_RUNNING),
    (NotRunning, StatusCode.STATUS_NOT_RUNNING),
    (UnknownSession, StatusCode.STATUS_UNKNOWN_SESSION),
    (InvalidOptions, StatusCode.STATUS_INVALID_ARGUMENT),
    (InvalidSidList, StatusCode.STATUS_INVALID_ARGUMENT),
    (ValueError, StatusCode.STATUS_INVALID_ARGUMENT),
]


def status_for(exc: Exception) -> StatusCode:
    for cls, status in _STATUS:
        if isinstance(exc, cls):
            return status
    return StatusCode.STATUS_INTERNAL_ERROR


class SRv6ManagerService:
    """CRUD over a node's SR policies (paths) and local SIDs (behaviors)."""

    def __init__(self, node: Node):
        self.node = node

    def _call(self, op, request: SRv6ManagerRequest) -> SRv6ManagerReply:
        try:
            if request.entity_type == "path":
                return SRv6ManagerReply(paths=[op(self._path_key(p), p, "path")
                                               for p in request.paths])
            if request.entity_type == "behavior":
                return SRv6ManagerReply(behaviors=[op(self._behavior_key(b), b, "behavior")
                                                   for b in request.behaviors])
            raise InvalidOptions(f"unknown entity type {request.entity_type!r}")
        except Exception as exc:
            if not isinstance(exc, (Srv6PmError, ValueError)):
                raise
            return SRv6ManagerReply(status=status_for(exc), message=str(exc))

    @staticmethod
    def _path_key(p: SRv6Path):
        return p.table, IPv6Network(p.destination)

    @staticmethod
    def _behavior_key(b: SRv6Behavior):
        return parse_sid(b.segment)

    def _exists(self, key, kind) -> bool:
        table = self.node.policies if kind == "path" else self.node.local_sids
        return key in table

    def _install(self, key, entity, kind):
        if kind == "path":
            self.node.add_policy(SrPolicy(key[1], SidList(entity.sr_path), entity.encapmode, key[0]))
        else:
            behavior = Behavior.from_action(entity.action)
            self.node.add_local_sid(LocalSid(key, behavior, entity.localsid_table))
        return entity

    def _create(self, key, entity, kind):
        if self._exists(key, kind):
            raise AlreadyExists(f"{kind} {entity} exists on {self.node.id}")
        return self._install(key, entity, kind)

    def _get(self, key, entity, kind):
        if not self._exists(key, kind):
            raise NotFound(f"{kind} {key} not on {self.node.id}")
        return self._as_message(key, kind)

    def _update(self, key, entity, kind):
        if not self._exists(key, kind):
            raise NotFound(f"{kind} {key} not on {self.node.id}")
        return self._install(key, entity, kind)

    def _remove(self, key, entity, kind):
        if not self._exists(key, kind):
            raise NotFound(f"{kind} {key} not on {self.node.id}")
        message = self._as_message(key, kind)
        if kind == "path":
            self.node.remove_policy(*key)
        else:
            self.node.remove_local_sid(key)
        return message

    def _as_message(self, key, kind):
        if kind == "path":
            p = self.node.policies[key]
            return SRv6Path(str(p.destination), [str(s) for s in p.sid_list], p.encapmode,
                            "", p.table)
        ls = self.node.local_sids[key]
        return SRv6Behavior(str(ls.sid), ls.behavior.value, localsid_table=ls.table)

    def Create(self, request: SRv6ManagerRequest) -> SRv6ManagerReply:
        return self._call(self._create, request)

    def Get(self, request: SRv6ManagerRequest) -> SRv6ManagerReply:
        return self._call(self._get, request)

    def Update(self, request: SRv6ManagerRequest) -> SRv6ManagerReply:
        return self._call(self._update, request)

    def Remove(self, request: SRv6ManagerRequest) -> SRv6ManagerReply:
        return self._call(self._remove, request)


@dataclass
class NodeSession:
    measure_id: int
    role: str  # "sender" | "reflector"
    sdlist: SidList
    sdlistreverse: SidList
    agent: object
    flows: tuple[FlowKey, ...]
    state: str = "running"
    tracker: LossTracker | None = None
    in_interfaces: list[str] = field(default_factory=list)
    out_interfaces: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


class SRv6PMService:
    """Per-node monitoring sessions. Monitored flows are reference counted so
    several sessions on one node may share a SID list."""

    def __init__(self, node: Node, retry_fraction: float = 0.05, max_retries: int = 64):
        self.node = node
        self.retry_fraction = retry_fraction
        self.max_retries = max_retries
        self.sessions: dict[tuple[str, SidList], NodeSession] = {}
        self._flow_refs: Counter[FlowKey] = Counter()

    # flow references

    def _acquire(self, keys):
        for key in keys:
            if self._flow_refs[key] == 0:
                self.node.engine.add_monitored_flow(key)
            self._flow_refs[key] += 1

    def _release(self, keys):
        for key in keys:
            self._flow_refs[key] -= 1
            if self._flow_refs[key] <= 0:
                del self._flow_refs[key]
                self.node.engine.remove_monitored_flow(key)

    # helpers

    def _parse(self, req):
        sdlist = SidList(req.sdlist)
        sdlistreverse = SidList(req.sdlistreverse)
        if req.response_mode not in RESPONSE_MODES:
            raise InvalidOptions(f"response_mode must be one of {RESPONSE_MODES}")
        req.color_options.validate()
        return sdlist, sdlistreverse

    def _running(self, role, sdlist) -> NodeSession:
        session = self.sessions.get((role, sdlist))
        if session is None or session.state != "running":
            raise NotRunning(f"no running {role} session for {sdlist} on {self.node.id}")
        return session

    def _check_free(self, role, sdlist):
        existing = self.sessions.get((role, sdlist))
        if existing is not None and existing.state == "running":
            raise AlreadyRunning(f"{role} session for {sdlist} already running on {self.node.id}")

    def _start(self, role, req, options, reply_cls):
        try:
            options.validate()
            sdlist, sdlistreverse = self._parse(req)
            self._check_free(role, sdlist)
            colors = req.color_options
            in_band = req.response_mode == "in_band"
            ports = (options.ss_udp_port, options.refl_udp_port)
            if role == "sender":
                flows = (FlowKey(Direction.INGRESS, sdlist),)
                if in_band:
                    flows += (FlowKey(Direction.EGRESS, sdlistreverse),)
                if not req.punt_sid:
                    raise InvalidOptions("sender request needs the reflector punt SID")
                tracker = LossTracker({FORWARD: str(sdlist), REVERSE: str(sdlistreverse)})
                agent = SenderAgent(
                    self.node, req.measure_id, sdlist, sdlistreverse, req.punt_sid, ports,
                    margin_ns=colors.margin_ns, in_band=in_band,
                    retry_interval_ns=round(colors.interval_ns * self.retry_fraction) or None,
                    max_retries=self.max_retries)
            else:
                flows = (FlowKey(Direction.EGRESS, sdlist),)
                if in_band:
                    flows += (FlowKey(Direction.INGRESS, sdlistreverse),)
                    if not req.punt_sid:
                        raise InvalidOptions("in-band reflector request needs the sender punt SID")
                tracker = None
                agent = ReflectorAgent(self.node, req.measure_id, sdlist, sdlistreverse,
                                       req.punt_sid or None, ports, margin_ns=colors.margin_ns)
            self.node.arm_marking(colors.interval_ns)
            try:
                agent.arm()
            except Exception:
                self.node.disarm_marking()
                raise
            self._acquire(flows)
            session = NodeSession(req.measure_id, role, sdlist, sdlistreverse, agent, flows,
                                  tracker=tracker, in_interfaces=list(req.in_interfaces),
                                  out_interfaces=list(req.out_interfaces))
            if tracker is not None:
                agent.on_sample = lambda sample, s=session: self._on_sample(s, sample)
            self.sessions[role, sdlist] = session
            return reply_cls()
        except (Srv6PmError, ValueError) as exc:
            return reply_cls(status=status_for(exc), message=str(exc))

    def _on_sample(self, session: NodeSession, sample) -> None:
        try:
            session.tracker.add(sample)
        except StaleSample as exc:
            session.diagnostics.append(str(exc))
            self.node.diagnose("stale_sample", str(exc))

    def _stop(self, role, req):
        try:
            session = self._running(role, SidList(req.sdlist))
            session.agent.disarm()
            self._release(session.flows)
            self.node.disarm_marking()
            session.state = "stopped"
            return StopFlowMonitoringReply()
        except (Srv6PmError, ValueError) as exc:
            return StopFlowMonitoringReply(status=status_for(exc), message=str(exc))

    # RPC surface

    def startFlowMonitoringSender(self, request: StartFlowMonitoringSenderRequest):
        return self._start("sender", request, request.sender_options,
                           StartFlowMonitoringSenderReply)

    def startFlowMonitoringReflector(self, request: StartFlowMonitoringReflectorRequest):
        return self._start("reflector", request, request.reflector_options,
                           StartFlowMonitoringReflectorReply)

    def stopFlowMonitoringSender(self, request: StopFlowMonitoringRequest):
        return self._stop("sender", request)

    def stopFlowMonitoringReflector(self, request: StopFlowMonitoringRequest):
        return self._stop("reflector", request)

    def retriveFlowMonitoringResults(self, request: RetriveFlowMonitoringDataRequest):
        try:
            sdlist = SidList(request.sdlist)
        except InvalidSidList as exc:
            return FlowMonitoringDataResponse(status=StatusCode.STATUS_INVALID_ARGUMENT,
                                              message=str(exc))
        session = self.sessions.get(("sender", sdlist)) or self.sessions.get(("reflector", sdlist))
        if session is None:
            return FlowMonitoringDataResponse(status=StatusCode.STATUS_UNKNOWN_SESSION,
                                              message=f"no session for {sdlist} on {self.node.id}")
        reports = []
        if session.tracker is not None:
            reports = sorted(session.tracker.reports,
                             key=lambda r: (r.epoch, r.direction != FORWARD))
        probe_log = []
        if isinstance(session.agent, ReflectorAgent):
            probe_log = [ProbeLogRecord(e.measure_id, e.sender_seq, e.epoch, e.arrived_at, e.early)
                         for e in session.agent.probe_log]
        return FlowMonitoringDataResponse(measure_id=session.measure_id, role=session.role,
                                          state=session.state, measurement_data=reports,
                                          probe_log=probe_log)

    retrieveFlowMonitoringResults = retriveFlowMonitoringResults
