from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from srv6pm.control.controller import Controller, InProcessChannel
from srv6pm.control.loss import LossReport, LossTracker, compute_interval_loss
from srv6pm.control.messages import (
    ColorOptions,
    FlowMonitoringDataResponse,
    MESSAGE_TYPES,
    ProbeLogRecord,
    ReflectorOptions,
    RetriveFlowMonitoringDataRequest,
    SenderOptions,
    SRv6Behavior,
    SRv6ManagerRequest,
    SRv6Path,
    StartFlowMonitoringSenderRequest,
    StatusCode,
    StopFlowMonitoringRequest,
    decode_message,
    encode_message,
)
from srv6pm.control.southbound import SRv6PMService
from srv6pm.counting import Direction, FlowKey
from srv6pm.dataplane import LossSample, Node
from srv6pm.errors import (
    AlreadyExists,
    AlreadyRunning,
    FormatError,
    InvalidOptions,
    NotFound,
    NotRunning,
    StaleSample,
    UnknownSession,
)
from srv6pm.packet import Color, SidList
from srv6pm.sim import Simulation
from srv6pm.sim.scenario import ScenarioBuilder


def sample(epoch, tx, rx, direction="forward"):
    return LossSample(1, direction, epoch, Color.of_epoch(epoch), tx, rx, epoch, 0, 0)


# interval loss

def test_first_block_one_loss():
    r = compute_interval_loss(None, sample(0, 100, 99))
    assert (r.interval_loss, r.interval_tx, r.interval_rx) == (1, 100, 99)
    assert r.color is Color.R and not r.anomalous


def test_same_color_difference():
    t = LossTracker()
    t.add(sample(0, 10, 7))
    t.add(sample(1, 4, 4))
    r = t.add(sample(2, 30, 25))
    assert (r.cumulative_loss, r.interval_loss) == (5, 2)
    assert (r.interval_tx, r.interval_rx) == (20, 18)


def test_no_loss():
    t = LossTracker()
    for e in range(6):
        assert t.add(sample(e, 50 * (e // 2 + 1), 50 * (e // 2 + 1))).interval_loss == 0


def test_negative_loss_is_flagged_not_dropped():
    r = compute_interval_loss(None, sample(0, 5, 6))
    assert r.interval_loss == -1 and "negative_loss" in r.flags


def test_stale_sample():
    t = LossTracker()
    t.add(sample(2, 10, 10))
    with pytest.raises(StaleSample):
        t.add(sample(2, 10, 10))
    with pytest.raises(StaleSample):
        t.add(sample(0, 1, 1))


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=30))
def test_intervals_partition_cumulative(steps):
    t = LossTracker()
    tx = {Color.R: 0, Color.B: 0}
    rx = dict(tx)
    for epoch, (sent, lost) in enumerate(steps):
        c = Color.of_epoch(epoch)
        tx[c] += sent
        rx[c] += sent - min(lost, sent)
        t.add(sample(epoch, tx[c], rx[c]))
    for c in Color:
        mine = [r for r in t.reports if r.color is c]
        if mine:
            assert sum(r.interval_loss for r in mine) == mine[-1].cumulative_loss


def test_report_dict_roundtrip():
    r = compute_interval_loss(None, sample(3, 9, 8)).with_flags("active_read")
    assert LossReport.from_dict(r.to_dict()) == r


# messages

def test_every_message_roundtrips():
    for cls in MESSAGE_TYPES.values():
        required = {f.name: _dummy(f) for f in dataclasses.fields(cls)
                    if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}
        msg = cls(**required)
        assert decode_message(encode_message(msg)) == msg


def _dummy(f):
    return {"int": 3, "str": "fc00::1"}.get(f.type, "fc00::1")


def test_nested_message_roundtrip():
    report = compute_interval_loss(None, sample(1, 10, 9))
    msg = FlowMonitoringDataResponse(measure_id=4, role="sender", state="running",
                                     measurement_data=[report],
                                     probe_log=[ProbeLogRecord(4, 1, 1, 99, True)])
    assert decode_message(encode_message(msg)) == msg
    req = StartFlowMonitoringSenderRequest(1, "fc00::1", "fc00::2",
                                           sender_options=SenderOptions(1, 2),
                                           color_options=ColorOptions(4, 1))
    assert decode_message(encode_message(req)) == req


@pytest.mark.parametrize("data", [b"", b"{}", b"[]", b'{"type":"Nope","fields":{}}',
                                  b'{"type":"StopFlowMonitoringRequest","fields":{}}'])
def test_bad_messages(data):
    with pytest.raises(FormatError):
        decode_message(data)


def test_color_options_validation():
    ColorOptions(10, 5).validate()
    assert ColorOptions(10).margin == 5
    for bad in (ColorOptions(10, 10), ColorOptions(0), ColorOptions(10, 5, 3)):
        with pytest.raises(InvalidOptions):
            bad.validate()


# SRv6Manager

def _controller():
    node = Node("R1", "fcbb:0:1::1")
    ctl = Controller()
    ctl.register_node("R1", InProcessChannel(node))
    return ctl, node


def _path_request():
    path = SRv6Path("fd00:0:8::/48", ["fcbb:0:2::e", "fcbb:0:7::e", "fcbb:0:8::d6"])
    return SRv6ManagerRequest("path", paths=[path])


def test_create_get_remove_path():
    ctl, node = _controller()
    created = ctl.srv6_manager_apply("Create", "R1", _path_request())
    got = ctl.srv6_manager_apply("Get", "R1", _path_request())
    assert got.paths == created.paths == _path_request().paths
    assert len(node.policies) == 1
    ctl.srv6_manager_apply("Remove", "R1", _path_request())
    with pytest.raises(NotFound):
        ctl.srv6_manager_apply("Get", "R1", _path_request())


def test_create_duplicate_and_update_absent():
    ctl, _ = _controller()
    ctl.srv6_manager_apply("Create", "R1", _path_request())
    with pytest.raises(AlreadyExists):
        ctl.srv6_manager_apply("Create", "R1", _path_request())
    other = SRv6ManagerRequest("path", paths=[SRv6Path("fd00:0:5::/48", ["fcbb:0:5::d6"])])
    with pytest.raises(NotFound):
        ctl.srv6_manager_apply("Update", "R1", other)


def test_update_replaces_path():
    ctl, node = _controller()
    ctl.srv6_manager_apply("Create", "R1", _path_request())
    new = SRv6ManagerRequest("path", paths=[SRv6Path("fd00:0:8::/48", ["fcbb:0:8::d6"])])
    ctl.srv6_manager_apply("Update", "R1", new)
    assert ctl.srv6_manager_apply("Get", "R1", new).paths == new.paths


def test_behaviors_and_punt_sid_learning():
    ctl, node = _controller()
    req = SRv6ManagerRequest("behavior", behaviors=[SRv6Behavior("fcbb:0:1::f0", "End.OP"),
                                                    SRv6Behavior("fcbb:0:1::e", "End")])
    ctl.srv6_manager_apply("Create", "R1", req)
    assert ctl.punt_sids["R1"] == "fcbb:0:1::f0"
    assert str(node.punt_sid) == "fcbb:0:1::f0"
    with pytest.raises(InvalidOptions):
        ctl.srv6_manager_apply("Create", "R1", SRv6ManagerRequest(
            "behavior", behaviors=[SRv6Behavior("fcbb:0:1::9", "End.BPF")]))


# SRv6PM sessions

def _scenario(duration=6.0, interval=1.0, rate=100, loss=0.0, response_mode="in_band"):
    b = ScenarioBuilder(seed=11, duration=duration)
    b.link("A", "B", delay=0.001, loss_rate=loss)
    b.link("B", "C", delay=0.001, loss_rate=loss)
    b.monitored_pair("A", "C", ("B",), rate=rate, interval=interval,
                     response_mode=response_mode)
    cfg = b.build()
    return cfg


def test_node_service_port_and_double_start():
    sim = Simulation(_scenario())
    sim.start()
    pm = sim.pm["A"]
    s = sim.config.sessions[0]
    req = StartFlowMonitoringSenderRequest(
        9, ",".join(s.sdlist), ",".join(s.sdlistreverse),
        sender_options=SenderOptions(7, 7), punt_sid="fcbb:0:3::f0")
    assert pm.startFlowMonitoringSender(req).status is StatusCode.STATUS_INVALID_ARGUMENT
    req.sender_options = SenderOptions(s.ss_udp_port, s.refl_udp_port)
    assert pm.startFlowMonitoringSender(req).status is StatusCode.STATUS_ALREADY_RUNNING


def test_controller_rejects_double_start_and_unknown_stop():
    sim = Simulation(_scenario())
    sim.start()
    s = sim.config.sessions[0]
    with pytest.raises(AlreadyRunning):
        sim.controller.start_flow_monitoring(
            77, "A", "C", SidList(s.sdlist), SidList(s.sdlistreverse),
            sender_options=SenderOptions(60000, 60001),
            reflector_options=ReflectorOptions(60000, 60001))
    with pytest.raises(UnknownSession):
        sim.controller.stop_flow_monitoring(999)
    stop = sim.pm["A"].stopFlowMonitoringSender(StopFlowMonitoringRequest("fc00::99"))
    assert stop.status is StatusCode.STATUS_NOT_RUNNING


def test_retrieve_unknown_session():
    pm = SRv6PMService(Node("X", "fc00::1"))
    reply = pm.retriveFlowMonitoringResults(RetriveFlowMonitoringDataRequest("fc00::5"))
    assert reply.status is StatusCode.STATUS_UNKNOWN_SESSION
    assert pm.retrieveFlowMonitoringResults is not None


def test_fresh_session_has_no_reports():
    sim = Simulation(_scenario())
    sim.start()
    assert sim.controller.retrieve_flow_monitoring_results(1) == []


def test_one_minute_is_six_intervals():
    sim = Simulation(_scenario(duration=60.0, interval=10.0, rate=5)).run()
    reports = sim.reports()
    assert sorted({r.epoch for r in reports}) == [0, 1, 2, 3, 4, 5]
    assert sim.nodes["A"].engine.color_state.epoch >= 6


def test_n_blocks_give_n_forward_and_reverse_reports():
    sim = Simulation(_scenario(duration=5.0)).run()
    fwd = [r for r in sim.reports() if r.direction == "forward"]
    rev = [r for r in sim.reports() if r.direction == "reverse"]
    assert [r.epoch for r in fwd] == [0, 1, 2, 3, 4]
    assert [r.epoch for r in rev] == [0, 1, 2, 3, 4]


def test_out_of_band_gives_forward_only():
    sim = Simulation(_scenario(duration=4.0, loss=0.03, response_mode="out_of_band")).run()
    reports = sim.reports()
    assert {r.direction for r in reports} == {"forward"}
    assert len(reports) == 4
    for r in reports:
        assert r.interval_loss == sim.oracle.block_drops(SidList(r.sid_list), r.epoch)


def test_reflector_reverse_counters_active():
    sim = Simulation(_scenario(duration=3.0))
    sim.run_until(1_500_000_000)
    s = sim.config.sessions[0]
    key = FlowKey(Direction.INGRESS, SidList(s.sdlistreverse))
    assert sim.nodes["C"].engine.read_counters(key, Color.R).packets > 0


def test_records_survive_stop_and_retrieval_is_stable():
    sim = Simulation(_scenario(duration=3.0)).run()
    session = sim.controller.sessions[1]
    assert session.state == "stopped"
    first = sim.controller.retrieve_flow_monitoring_results(1)
    assert first and first == sim.controller.retrieve_flow_monitoring_results(1)
    with pytest.raises(NotRunning):
        sim.controller.stop_flow_monitoring(1)


def test_stopped_flow_not_counted():
    sim = Simulation(_scenario(duration=3.0)).run()
    s = sim.config.sessions[0]
    node = sim.nodes["A"]
    assert not node.engine.is_monitored(FlowKey(Direction.INGRESS, SidList(s.sdlist)))
    node.receive(_host_pkt())
    assert node.engine.list_flows(Direction.INGRESS) == []


def _host_pkt():
    from srv6pm.packet import make_udp_packet
    return make_udp_packet("fd00:0:1::100", "fd00:0:3::100", 1, 2, b"x")


def test_publication_to_two_sinks_in_order():
    sim = Simulation(_scenario(duration=4.0))
    a, b = [], []
    sim.controller.subscribe(a.append)
    sim.controller.subscribe(b.append)
    sim.run()
    assert a == b and len(a) == 8
    for direction in ("forward", "reverse"):
        epochs = [r.epoch for r in a if r.direction == direction]
        assert epochs == sorted(epochs)


def test_publish_without_sinks():
    Controller().publish_measurement(compute_interval_loss(None, sample(0, 1, 1)))


def test_reports_never_active_reads_in_normal_runs():
    sim = Simulation(_scenario(duration=4.0, loss=0.02)).run()
    assert all(not r.flags for r in sim.reports())


def test_every_call_crosses_the_wire_encoding():
    sim = Simulation(_scenario(duration=2.0)).run()
    assert sum(ch.calls for ch in sim.controller.channels.values()) > 0
