"""The controller: provisions SRv6 entities, drives monitoring sessions on
sender/reflector nodes through the southbound API, and publishes interval
loss reports to subscribed sinks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..errors import (
    AlreadyExists,
    AlreadyRunning,
    InvalidOptions,
    NotFound,
    NotRunning,
    Srv6PmError,
    UnknownSession,
)
from ..packet import SidList
from .loss import FORWARD, REVERSE, LossReport
from .messages import (
    ColorOptions,
    ReflectorOptions,
    RetriveFlowMonitoringDataRequest,
    SenderOptions,
    SRv6ManagerRequest,
    StartFlowMonitoringReflectorRequest,
    StartFlowMonitoringSenderRequest,
    StatusCode,
    StopFlowMonitoringRequest,
    decode_message,
    encode_message,
)
from .southbound import SRv6ManagerService, SRv6PMService

log = logging.getLogger(__name__)

_ERRORS = {
    StatusCode.STATUS_NOT_FOUND: NotFound,
    StatusCode.STATUS_ALREADY_EXISTS: AlreadyExists,
    StatusCode.STATUS_ALREADY_RUNNING: AlreadyRunning,
    StatusCode.STATUS_NOT_RUNNING: NotRunning,
    StatusCode.STATUS_UNKNOWN_SESSION: UnknownSession,
    StatusCode.STATUS_INVALID_ARGUMENT: InvalidOptions,
}


def raise_for_status(reply):
    if reply.status is StatusCode.STATUS_SUCCESS:
        return reply
    raise _ERRORS.get(reply.status, Srv6PmError)(reply.message or reply.status.value)


class InProcessChannel:
    """Southbound channel to one node. Every request and reply goes through
    the message encoding so the in-process path exercises the wire contract."""

    def __init__(self, node, pm: SRv6PMService | None = None):
        self.node = node
        self.manager = SRv6ManagerService(node)
        self.pm = pm or SRv6PMService(node)
        self.calls = 0

    def call(self, service: str, method: str, request):
        target = self.manager if service == "SRv6Manager" else self.pm
        request = decode_message(encode_message(request))
        reply = getattr(target, method)(request)
        self.calls += 1
        return decode_message(encode_message(reply))


@dataclass
class MonitoringSession:
    measure_id: int
    sdlist: SidList
    sdlistreverse: SidList
    sender: str
    reflector: str
    sender_options: SenderOptions
    reflector_options: ReflectorOptions
    color_options: ColorOptions
    response_mode: str = "in_band"
    state: str = "created"
    records: list[LossReport] = field(default_factory=list)
    _published: set = field(default_factory=set, repr=False)

    def _advance(self, new_state: str) -> None:
        allowed = {"created": "running", "running": "stopped"}
        if allowed.get(self.state) != new_state:
            raise NotRunning(f"session {self.measure_id}: {self.state} -> {new_state} not allowed")
        self.state = new_state


class Controller:
    """Single logical actor; all node access goes through registered channels."""

    def __init__(self):
        self.channels: dict[str, InProcessChannel] = {}
        self.sessions: dict[int, MonitoringSession] = {}
        self.punt_sids: dict[str, str] = {}
        self._sinks: list = []
        self._topology_sinks: list = []

    def register_node(self, node_id: str, channel) -> None:
        self.channels[node_id] = channel

    def _channel(self, node_id: str):
        try:
            return self.channels[node_id]
        except KeyError:
            raise NotFound(f"unknown node {node_id!r}") from None

    # SRv6 entities

    def srv6_manager_apply(self, op: str, node_id: str, request: SRv6ManagerRequest):
        if op not in ("Create", "Get", "Update", "Remove"):
            raise InvalidOptions(f"unknown SRv6Manager operation {op!r}")
        reply = raise_for_status(self._channel(node_id).call("SRv6Manager", op, request))
        if request.entity_type == "behavior":
            for b in request.behaviors:
                if b.action == "End.OP":
                    if op in ("Create", "Update"):
                        self.punt_sids.setdefault(node_id, b.segment)
                    elif op == "Remove" and self.punt_sids.get(node_id) == b.segment:
                        del self.punt_sids[node_id]
        return reply

    # monitoring sessions

    def start_flow_monitoring(self, measure_id: int, sender: str, reflector: str,
                              sdlist, sdlistreverse, *, sender_options=None,
                              reflector_options=None, color_options=None,
                              response_mode: str = "in_band") -> MonitoringSession:
        sdlist, sdlistreverse = SidList(sdlist), SidList(sdlistreverse)
        if measure_id in self.sessions:
            raise AlreadyRunning(f"measure_id {measure_id} already used")
        for s in self.sessions.values():
            if s.state == "running" and s.sender == sender and s.sdlist == sdlist:
                raise AlreadyRunning(f"{sender} already monitors {sdlist}")
        session = MonitoringSession(
            measure_id, sdlist, sdlistreverse, sender, reflector,
            sender_options or SenderOptions(), reflector_options or ReflectorOptions(),
            color_options or ColorOptions(), response_mode)
        so, ro = session.sender_options, session.reflector_options
        if (so.ss_udp_port, so.refl_udp_port) != (ro.ss_udp_port, ro.refl_udp_port):
            raise InvalidOptions("sender and reflector UDP ports disagree")
        in_band = response_mode == "in_band"
        refl_req = StartFlowMonitoringReflectorRequest(
            measure_id, str(sdlist), str(sdlistreverse), reflector_options=ro,
            color_options=session.color_options,
            punt_sid=self.punt_sids.get(sender, "") if in_band else "",
            response_mode=response_mode)
        send_req = StartFlowMonitoringSenderRequest(
            measure_id, str(sdlist), str(sdlistreverse), sender_options=so,
            color_options=session.color_options, punt_sid=self.punt_sids.get(reflector, ""),
            response_mode=response_mode)
        # reflector first so the first query always finds an armed peer
        raise_for_status(self._channel(reflector).call(
            "SRv6PM", "startFlowMonitoringReflector", refl_req))
        try:
            raise_for_status(self._channel(sender).call(
                "SRv6PM", "startFlowMonitoringSender", send_req))
        except Srv6PmError:
            self._channel(reflector).call("SRv6PM", "stopFlowMonitoringReflector",
                                          StopFlowMonitoringRequest(str(sdlist)))
            raise
        session._advance("running")
        self.sessions[measure_id] = session
        return session

    def _session(self, measure_id: int) -> MonitoringSession:
        try:
            return self.sessions[measure_id]
        except KeyError:
            raise UnknownSession(f"no session {measure_id}") from None

    def stop_flow_monitoring(self, measure_id: int) -> MonitoringSession:
        session = self._session(measure_id)
        if session.state != "running":
            raise NotRunning(f"session {measure_id} is {session.state}")
        req = StopFlowMonitoringRequest(str(session.sdlist))
        raise_for_status(self._channel(session.sender).call(
            "SRv6PM", "stopFlowMonitoringSender", req))
        raise_for_status(self._channel(session.reflector).call(
            "SRv6PM", "stopFlowMonitoringReflector", req))
        session._advance("stopped")
        return session

    def retrieve_flow_monitoring_results(self, measure_id: int) -> list[LossReport]:
        """Sender reports merged with the reflector's probe log; non-destructive."""
        session = self._session(measure_id)
        req = RetriveFlowMonitoringDataRequest(str(session.sdlist))
        sent = raise_for_status(self._channel(session.sender).call(
            "SRv6PM", "retriveFlowMonitoringResults", req))
        refl = raise_for_status(self._channel(session.reflector).call(
            "SRv6PM", "retriveFlowMonitoringResults", req))
        arrivals = {(e.sender_seq): e for e in refl.probe_log if e.measure_id == measure_id}
        margin_ns = session.color_options.margin_ns
        merged = []
        for report in sent.measurement_data:
            entry = arrivals.get(report.sender_seq)
            flags = []
            if entry is not None:
                if report.direction == FORWARD:
                    transit = entry.arrived_at - report.sent_at
                    if entry.early:
                        flags.append("active_read")
                else:
                    transit = report.read_timestamp - entry.arrived_at
                if transit > margin_ns:
                    flags.append("margin_exceeded")
            merged.append(report.with_flags(*flags) if flags else report)
        merged.sort(key=lambda r: (r.epoch, r.direction != FORWARD))
        return merged

    # publication

    def subscribe(self, sink) -> None:
        """``sink(report)`` receives every new report in publication order."""
        self._sinks.append(sink)

    def subscribe_topology(self, sink) -> None:
        self._topology_sinks.append(sink)

    def publish_measurement(self, report: LossReport) -> None:
        for sink in self._sinks:
            sink(report)

    def publish_topology(self, topology) -> None:
        for sink in self._topology_sinks:
            sink(topology)

    def poll(self) -> list[LossReport]:
        """Collect new reports from every session and publish them."""
        fresh = []
        for measure_id in sorted(self.sessions):
            session = self.sessions[measure_id]
            for report in self.retrieve_flow_monitoring_results(measure_id):
                key = (report.direction, report.epoch)
                if key in session._published:
                    continue
                session._published.add(key)
                session.records.append(report)
                fresh.append(report)
                self.publish_measurement(report)
        return fresh


__all__ = ["Controller", "InProcessChannel", "MonitoringSession", "raise_for_status",
           "FORWARD", "REVERSE"]
