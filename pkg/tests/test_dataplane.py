from __future__ import annotations

from ipaddress import IPv6Network

import pytest
from hypothesis import given
from hypothesis import strategies as st

from srv6pm.counting import Direction, FlowKey
from srv6pm.dataplane import (
    Behavior,
    DeliverLocal,
    Drop,
    Forward,
    LocalSid,
    Node,
    NullRuntime,
    Punt,
    ReflectorAgent,
    SenderAgent,
    SrPolicy,
    resolve_epoch,
)
from srv6pm.errors import InvalidOptions, SessionStopped, UnmatchedSeq
from srv6pm.packet import (
    CTRL_IN_BAND,
    Color,
    LmQuery,
    LmResponse,
    SidList,
    build_probe_packet,
    decode_probe_payload,
    encapsulate,
    encode_packet,
    get_color,
    make_udp_packet,
    parse_sid,
    srh_advance,
)
from srv6pm.sim import Simulation
from srv6pm.sim.scenario import ScenarioBuilder

NET8 = "fd00:0:8::/48"
R2_R7_R8 = SidList(["fcbb:0:2::e", "fcbb:0:7::e", "fcbb:0:8::d6"])
PORTS = (50000, 50001)


def r1(runtime=None) -> Node:
    node = Node("R1", "fcbb:0:1::1", locator="fcbb:0:1::/48", networks=["fd00:0:1::/48"],
                runtime=runtime or NullRuntime())
    node.add_route("fcbb:0:2::/48", "R2")
    node.add_route("fcbb:0:8::/48", "R2")
    node.add_local_sid(LocalSid(parse_sid("fcbb:0:1::f0"), Behavior.END_OP))
    node.add_policy(SrPolicy(IPv6Network(NET8), R2_R7_R8))
    return node


def host_packet(dst="fd00:0:8::100", payload=b"data"):
    return make_udp_packet("fd00:0:1::100", dst, 40000, 40001, payload)


# block-number resolution

@given(st.integers(0, 10 ** 9), st.integers(-127, 127))
def test_resolve_epoch_within_window(ref, delta):
    epoch = ref + delta
    if epoch >= 0:
        assert resolve_epoch(epoch & 0xFF, ref) == epoch


def test_resolve_epoch_wrap():
    assert resolve_epoch(255, 256) == 255
    assert resolve_epoch(0, 255) == 256


# forwarding

def test_policy_encapsulates_with_three_sids():
    node = r1()
    decision = node.process_packet(host_packet())
    assert isinstance(decision, Forward) and decision.next_hop == "R2"
    out = decision.packet
    assert out.srh.sid_list == R2_R7_R8
    assert out.ip.dst == R2_R7_R8[0]
    assert out.inner == host_packet()


def test_no_route_drops():
    node = Node("X", "fcbb:0:9::1")
    decision = node.process_packet(host_packet("fd00:0:5::1"))
    assert isinstance(decision, Drop) and decision.reason == "no_route"


def test_hop_limit_drop():
    node = r1()
    pkt = make_udp_packet("fd00:0:1::100", "fcbb:0:2::1", 1, 2, hop_limit=1)
    assert node.process_packet(pkt) == Drop("hop_limit", pkt)


def test_unmonitored_flow_has_clear_marking():
    node = r1()
    out = node.process_packet(host_packet()).packet
    assert out.ip.traffic_class & 0x03 == 0
    assert out.stamp is None


def test_monitored_flow_marked_and_counted():
    node = r1()
    k = FlowKey(Direction.INGRESS, R2_R7_R8)
    node.engine.add_monitored_flow(k)
    out = node.process_packet(host_packet()).packet
    assert get_color(out) == (Color.R, True)
    assert node.engine.read_counters(k, Color.R).packets == 1
    assert node.engine.read_counters(k, Color.R).bytes == out.size()


def test_color_follows_clock():
    rt = NullRuntime()
    node = r1(rt)
    k = FlowKey(Direction.INGRESS, R2_R7_R8)
    node.engine.add_monitored_flow(k)
    node.arm_marking(10)
    for t in (0, 5, 9, 10, 15, 19, 20):
        rt.time = t
        out = node.process_packet(host_packet()).packet
        assert get_color(out)[0] is Color.of_epoch(t // 10)
        assert out.stamp == (R2_R7_R8, t // 10)
    assert node.engine.read_counters(k, Color.R).packets == 4
    assert node.engine.read_counters(k, Color.B).packets == 3


def test_mismatched_interval_rejected():
    node = r1()
    node.arm_marking(10)
    with pytest.raises(InvalidOptions):
        node.arm_marking(20)


def _egress_node():
    node = Node("R8", "fcbb:0:8::1", networks=[NET8])
    node.add_local_sid(LocalSid(parse_sid("fcbb:0:8::d6"), Behavior.END_DECAP))
    node.add_local_sid(LocalSid(parse_sid("fcbb:0:8::f0"), Behavior.END_OP))
    node.add_local_sid(LocalSid(parse_sid("fcbb:0:8::e"), Behavior.END))
    return node


def _arrived(node_from: Node):
    pkt = node_from.process_packet(host_packet()).packet
    while pkt.srh.segments_left:
        pkt = srh_advance(pkt)
    return pkt


def test_end_decap_counts_then_delivers_inner():
    src = r1()
    src.engine.add_monitored_flow(FlowKey(Direction.INGRESS, R2_R7_R8))
    egress = _egress_node()
    k = FlowKey(Direction.EGRESS, R2_R7_R8)
    egress.engine.add_monitored_flow(k)
    decision = egress.process_packet(_arrived(src))
    assert isinstance(decision, DeliverLocal)
    assert encode_packet(decision.packet) == encode_packet(host_packet())
    assert egress.engine.read_counters(k, Color.R).packets == 1


def test_end_with_no_segments_left_is_malformed():
    node = _egress_node()
    lst = SidList(["fcbb:0:8::e"])
    pkt = encapsulate(host_packet(), "fcbb:0:1::1", lst)
    decision = node.process_packet(pkt)
    assert isinstance(decision, Drop) and decision.reason == "malformed"


def test_end_op_punts_probe():
    node = _egress_node()
    probe = build_probe_packet("query", LmQuery(1), SidList(["fcbb:0:8::d6"]), "fcbb:0:8::f0",
                               PORTS, "fcbb:0:1::1")
    assert isinstance(node.process_packet(probe), Punt)


def test_probe_sid_list_is_not_counted():
    node = r1()
    k = FlowKey(Direction.INGRESS, R2_R7_R8)
    node.engine.add_monitored_flow(k)
    probe = build_probe_packet("query", LmQuery(1), R2_R7_R8, "fcbb:0:8::f0", PORTS,
                               node.address)
    node.send(probe)
    assert node.engine.read_counters(k, Color.R).packets == 0


# agents

def _reflector(in_band=True):
    node = _egress_node()
    rev = SidList(["fcbb:0:2::e", "fcbb:0:1::d6"])
    node.engine.add_monitored_flow(FlowKey(Direction.EGRESS, R2_R7_R8))
    node.engine.add_monitored_flow(FlowKey(Direction.INGRESS, rev))
    node.add_route("fcbb:0:2::/48", "R7")
    agent = ReflectorAgent(node, 1, R2_R7_R8, rev, "fcbb:0:1::f0" if in_band else None,
                           PORTS, margin_ns=5)
    agent.arm()
    return node, agent


def _sender(in_band=True):
    node = r1()
    rev = SidList(["fcbb:0:2::e", "fcbb:0:1::d6"])
    node.engine.add_monitored_flow(FlowKey(Direction.INGRESS, R2_R7_R8))
    node.engine.add_monitored_flow(FlowKey(Direction.EGRESS, rev))
    agent = SenderAgent(node, 1, R2_R7_R8, rev, "fcbb:0:8::f0", PORTS, margin_ns=5,
                        in_band=in_band)
    agent.arm()
    return node, agent


def test_query_with_zero_traffic_and_seq_increments():
    _, agent = _sender()
    p0 = agent.emit_query(0)
    p1 = agent.emit_query(1)
    q0, q1 = decode_probe_payload(p0), decode_probe_payload(p1)
    assert q0.sender_tx_counter == 0
    assert q1.sender_seq == q0.sender_seq + 1
    assert q0.ctrl_code == CTRL_IN_BAND
    assert p0.srh.sid_list[-1] == parse_sid("fcbb:0:8::f0")


def test_query_carries_inactive_tx():
    node, agent = _sender()
    for _ in range(4):
        node.process_packet(host_packet())
    assert decode_probe_payload(agent.emit_query(0)).sender_tx_counter == 4
    assert decode_probe_payload(agent.emit_query(1)).sender_tx_counter == 0


def test_stopped_sender():
    _, agent = _sender()
    agent.disarm()
    with pytest.raises(SessionStopped):
        agent.emit_query(0)


def _at_last_segment(pkt):
    while pkt.srh.segments_left:
        pkt = srh_advance(pkt)
    return pkt


def test_reflector_in_band_response():
    node, agent = _reflector()
    q = LmQuery(7, 10, 0, 0, CTRL_IN_BAND)
    probe = build_probe_packet("query", q, R2_R7_R8, "fcbb:0:8::f0", PORTS, "fcbb:0:1::1")
    node.send(_at_last_segment(probe))
    (_, hop, resp), = node.runtime.sent
    r = decode_probe_payload(resp)
    assert isinstance(r, LmResponse) and r.echoes(q)
    assert r.reflector_seq == 0 and r.in_band
    assert resp.srh.sid_list[-1] == parse_sid("fcbb:0:1::f0")
    assert resp.udp.src_port == PORTS[1] and resp.udp.dst_port == PORTS[0]
    assert agent.probe_log[0].early  # no settle snapshot was taken
    assert node.diagnostics and node.diagnostics[0][1] == "early_query"


def test_reflector_out_of_band_response():
    node, agent = _reflector(in_band=False)
    q = LmQuery(3, 5, 0, 0, 0)
    probe = build_probe_packet("query", q, R2_R7_R8, "fcbb:0:8::f0", PORTS, "fcbb:0:1::1")
    node.send(_at_last_segment(probe))
    (_, dst, resp), = node.runtime.sent
    assert dst == "fcbb:0:1::1" and resp.srh is None
    r = decode_probe_payload(resp)
    assert r.echoes(q) and r.reflector_seq == 0 and r.reflector_tx_counter == 0


def test_reflector_ignores_port_mismatch():
    node, _ = _reflector()
    probe = build_probe_packet("query", LmQuery(1), R2_R7_R8, "fcbb:0:8::f0", (1, 2),
                               "fcbb:0:1::1")
    node.send(_at_last_segment(probe))
    assert node.runtime.sent == []
    assert node.diagnostics[-1][1] == "unknown_session"


def test_sender_response_matching():
    node, agent = _sender(in_band=False)
    q = decode_probe_payload(agent.emit_query(0, tx=100))
    fwd, rev = agent.on_response(LmResponse(q.sender_seq, 100, 0, 100))
    assert fwd.tx - fwd.rx == 0 and rev is None
    with pytest.raises(UnmatchedSeq):
        agent.on_response(LmResponse(q.sender_seq, 100, 0, 100))


def test_sender_rejects_wrong_echo():
    _, agent = _sender(in_band=False)
    q = decode_probe_payload(agent.emit_query(0, tx=100))
    with pytest.raises(UnmatchedSeq):
        agent.on_response(LmResponse(q.sender_seq, 99, 0, 99))


def test_retries_share_snapshot_and_clear_together():
    _, agent = _sender(in_band=False)
    first = decode_probe_payload(agent.emit_query(4, tx=9))
    again = decode_probe_payload(agent.emit_query(4, tx=9))
    assert again.sender_seq == first.sender_seq + 1
    agent.on_response(LmResponse(again.sender_seq, 9, 4, 9))
    assert agent.pending == {}
    with pytest.raises(UnmatchedSeq):
        agent.on_response(LmResponse(first.sender_seq, 9, 4, 9))


# simulator-level properties

class TracingSimulation(Simulation):
    def __init__(self, cfg):
        self.hops = []
        self.delivered_inner = []
        super().__init__(cfg)

    def transmit(self, node, next_hop, pkt):
        kind = "data" if pkt.inner is not None else ("probe" if pkt.srh else "other")
        self.hops.append((kind, pkt.srh.sid_list if pkt.srh else None, node.id, next_hop))
        super().transmit(node, next_hop, pkt)

    def deliver(self, node, pkt):
        self.delivered_inner.append(pkt)
        super().deliver(node, pkt)


def _line_scenario(loss=0.0):
    b = ScenarioBuilder(seed=4, duration=3)
    for x, y in [("A", "B"), ("B", "C"), ("C", "D"), ("B", "E"), ("E", "D")]:
        b.link(x, y, delay=0.002, loss_rate=loss)
    b.monitored_pair("A", "D", ("E",), rate=50, interval=1.0)
    return b.build()


def test_probes_follow_data_path():
    sim = TracingSimulation(_line_scenario())
    sim.run()
    sdlist = SidList(sim.config.sessions[0].sdlist)
    data = [(a, b) for kind, s, a, b in sim.hops if kind == "data" and s == sdlist]
    probes = [(a, b) for kind, s, a, b in sim.hops
              if kind == "probe" and s is not None and s[:-1] == sdlist[:-1]
              and a == "A"]
    path = data[:3]
    assert path == [("A", "B"), ("B", "E"), ("E", "D")]
    # the query leaves A along the same first hop and visits the same links
    probe_links = {(a, b) for kind, s, a, b in sim.hops
                   if kind == "probe" and s is not None and len(s) == len(sdlist)
                   and s[0] == sdlist[0]}
    assert set(path) <= probe_links
    assert probes and probes[0] == ("A", "B")


def test_decap_delivers_original_bytes():
    sim = TracingSimulation(_line_scenario())
    sim.run()
    assert sim.delivered_inner
    for pkt in sim.delivered_inner:
        assert pkt.srh is None and pkt.inner is None
        flow = sim.config.traffic[int.from_bytes(pkt.payload[:4], "big")]
        seq = int.from_bytes(pkt.payload[4:8], "big")
        src = sim._host_address(flow.src, "")
        dst = sim._host_address(flow.dst, "")
        payload = pkt.payload[:8] + bytes(flow.size - 8)
        original = make_udp_packet(src, dst, flow.src_port, flow.dst_port, payload)
        assert encode_packet(pkt) == encode_packet(original)
        assert seq >= 0


def test_lossless_ingress_equals_egress():
    sim = Simulation(_line_scenario()).run()
    for r in sim.reports():
        assert r.interval_tx == r.interval_rx
        assert r.interval_loss == 0
    for tally in sim.oracle.blocks.values():
        assert tally.sent == tally.delivered


def test_egress_color_matches_ingress_color():
    sim = Simulation(_line_scenario(loss=0.02)).run()
    for (sids, epoch), tally in sim.oracle.blocks.items():
        rx = [r for r in sim.reports() if r.sid_list == str(sids) and r.epoch == epoch]
        assert rx and rx[0].interval_rx == tally.delivered
        assert rx[0].color == Color.of_epoch(epoch)
