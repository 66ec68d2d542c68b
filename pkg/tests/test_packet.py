from __future__ import annotations

import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srv6pm.errors import (
    InvalidSidList,
    LengthError,
    NoSegmentsLeft,
    PortsEqual,
    ReservedNonZero,
    UnknownFlags,
)
from srv6pm.packet import (
    CTRL_IN_BAND,
    CTRL_OUT_OF_BAND,
    LM_QUERY_LEN,
    LM_RESPONSE_LEN,
    MAX_SIDS,
    Color,
    Ipv6Header,
    LmQuery,
    LmResponse,
    Packet,
    SidList,
    build_probe_packet,
    decode_lm_query,
    decode_lm_response,
    decode_packet,
    decode_probe_payload,
    encapsulate,
    encode_lm_query,
    encode_lm_response,
    encode_packet,
    get_color,
    make_udp_packet,
    parse_sid,
    set_color,
    srh_advance,
)

u8 = st.integers(0, 0xFF)
u32 = st.integers(0, 0xFFFFFFFF)
u64 = st.integers(0, 0xFFFFFFFFFFFFFFFF)
known_flags = st.integers(0, 3)

queries = st.builds(LmQuery, u32, u64, u8, known_flags, st.sampled_from([0, 1]))
responses = st.builds(LmResponse, u32, u64, u8, u64, u32, u64, u8, known_flags,
                      st.sampled_from([0, 1]))
sids = st.integers(0, (1 << 128) - 1).map(parse_sid)
sid_lists = st.lists(sids, min_size=1, max_size=MAX_SIDS).map(SidList)


def sl(*names):
    return SidList([f"fcbb:0:{n}::e" for n in names])


# SegmentId / SidList

@given(sids)
def test_sid_text_roundtrip(sid):
    assert parse_sid(str(sid)) == sid


@given(sid_lists)
def test_sid_list_text_roundtrip(lst):
    assert SidList(str(lst)) == lst
    assert hash(SidList(str(lst))) == hash(lst)


def test_sid_list_length_bounds():
    with pytest.raises(InvalidSidList):
        SidList([])
    with pytest.raises(InvalidSidList):
        SidList([f"fc00::{i}" for i in range(MAX_SIDS + 1)])
    assert len(SidList([f"fc00::{i}" for i in range(MAX_SIDS)])) == MAX_SIDS


def test_sid_list_equality_is_order_sensitive():
    assert sl(1, 2) != sl(2, 1)
    assert sl(1, 2) == sl(1, 2)


def test_bad_sid_text():
    with pytest.raises(InvalidSidList):
        parse_sid("not-an-address")


def test_color_other_is_involution():
    for c in Color:
        assert c.other().other() is c
        assert c.other() is not c
    assert [c.value for c in Color] == [0, 1]


# LM query

def test_zero_query_is_sixteen_zero_bytes():
    q = LmQuery()
    assert encode_lm_query(q) == bytes(16)
    assert decode_lm_query(bytes(16)) == q


def test_query_counter_is_big_endian_at_offset_4():
    data = encode_lm_query(LmQuery(sender_tx_counter=2 ** 40))
    assert data[4:12] == (2 ** 40).to_bytes(8, "big")
    assert data[:4] == bytes(4) and data[12:] == bytes(4)


def test_query_layout():
    data = encode_lm_query(LmQuery(0x01020304, 0x1122334455667788, 0xAB, 0x02, CTRL_IN_BAND))
    assert data.hex() == "01020304" "1122334455667788" "ab" "02" "01" "00"


@pytest.mark.parametrize("n", [0, 1, 15, 17, 40])
def test_query_length_rejected(n):
    with pytest.raises(LengthError):
        decode_lm_query(bytes(n))


def test_query_reserved_must_be_zero():
    with pytest.raises(ReservedNonZero):
        decode_lm_query(bytes(15) + b"\x01")


def test_unknown_flags_rejected_on_encode_preserved_on_decode():
    with pytest.raises(UnknownFlags):
        encode_lm_query(LmQuery(flags=0x80))
    raw = bytearray(encode_lm_query(LmQuery()))
    raw[13] = 0x84
    assert decode_lm_query(bytes(raw)).flags == 0x84


def test_query_field_ranges():
    with pytest.raises(ValueError):
        LmQuery(sender_seq=1 << 32)
    with pytest.raises(ValueError):
        LmQuery(block_number=256)


@settings(max_examples=300)
@given(queries)
def test_query_roundtrip(q):
    assert decode_lm_query(encode_lm_query(q)) == q


# LM response

def test_zero_response_is_all_zero():
    r = LmResponse()
    assert encode_lm_response(r) == bytes(LM_RESPONSE_LEN)
    assert decode_lm_response(bytes(LM_RESPONSE_LEN)) == r


def test_response_layout():
    r = LmResponse(1, 2, 3, 4, 5, 6, 7, 1, CTRL_IN_BAND)
    data = encode_lm_response(r)
    assert struct.unpack("!IQBBBBQIQB3s", data) == (1, 2, 3, 1, 1, 0, 4, 5, 6, 7, bytes(3))


@pytest.mark.parametrize("n", [0, 16, 36, 39, 41])
def test_response_length_rejected(n):
    with pytest.raises(LengthError):
        decode_lm_response(bytes(n))


@pytest.mark.parametrize("offset", [15, 37, 38, 39])
def test_response_reserved_must_be_zero(offset):
    raw = bytearray(LM_RESPONSE_LEN)
    raw[offset] = 1
    with pytest.raises(ReservedNonZero):
        decode_lm_response(bytes(raw))


@settings(max_examples=300)
@given(responses)
def test_response_roundtrip(r):
    assert decode_lm_response(encode_lm_response(r)) == r


def test_response_echoes_query():
    q = LmQuery(9, 100, 3, 0, CTRL_OUT_OF_BAND)
    assert LmResponse(9, 100, 3, 98).echoes(q)
    assert not LmResponse(9, 101, 3, 98).echoes(q)


# DS marking

def _pkt(tc=0):
    return make_udp_packet("fd00::1", "fd00::2", 1, 2, b"x", traffic_class=tc)


def test_set_get_color_identity():
    assert get_color(set_color(_pkt(), Color.R, True)) == (Color.R, True)
    assert get_color(set_color(_pkt(), Color.B, True)) == (Color.B, True)
    assert get_color(_pkt()) == (Color.R, False)


def test_color_uses_mask_0x01():
    assert set_color(_pkt(), Color.B, False).ip.traffic_class == 0x01
    assert set_color(_pkt(), Color.R, True).ip.traffic_class == 0x02


def test_marking_exhaustive_over_traffic_class():
    for tc in range(256):
        for color in Color:
            for monitored in (False, True):
                out = set_color(_pkt(tc), color, monitored)
                assert out.ip.traffic_class & ~0x03 == tc & ~0x03
                assert get_color(out) == (color, monitored)


# SRH

def _srh_packet(lst: SidList):
    return encapsulate(_pkt(), "fcbb::1", lst)


def test_srh_advance_two_of_three():
    lst = sl(1, 2, 3)
    pkt = _srh_packet(lst)
    assert pkt.srh.segments_left == 2 and pkt.ip.dst == lst[0]
    nxt = srh_advance(pkt)
    assert nxt.srh.segments_left == 1 and nxt.ip.dst == lst[1]


def test_srh_advance_at_zero():
    pkt = _srh_packet(sl(1))
    with pytest.raises(NoSegmentsLeft):
        srh_advance(pkt)


@given(sid_lists)
def test_srh_walk_matches_reference(lst):
    pkt = _srh_packet(lst)
    visited = [pkt.ip.dst]
    while pkt.srh.segments_left:
        pkt = srh_advance(pkt)
        visited.append(pkt.ip.dst)
    assert visited == list(lst.segments)
    assert pkt.ip.dst == lst[-1]


# probes

def test_probe_last_sid_is_punt_sid():
    fwd = sl(2, 7, 8)
    pkt = build_probe_packet("query", LmQuery(1), fwd, "fcbb:0:8::f0", (50000, 50001), "fcbb::1")
    assert pkt.srh.sid_list[-1] == parse_sid("fcbb:0:8::f0")
    assert list(pkt.srh.sid_list)[:-1] == list(fwd)[:-1]
    assert pkt.udp.src_port != pkt.udp.dst_port


def test_probe_ports_equal():
    with pytest.raises(PortsEqual):
        build_probe_packet("query", LmQuery(), sl(1), "fc00::f0", (5, 5), "fc00::1")


@given(st.one_of(queries, responses), sid_lists,
       st.tuples(st.integers(1, 65535), st.integers(1, 65535)).filter(lambda p: p[0] != p[1]))
def test_probe_payload_roundtrip(msg, lst, ports):
    kind = "query" if isinstance(msg, LmQuery) else "response"
    pkt = build_probe_packet(kind, msg, lst, "fc00::f0", ports, "fc00::1")
    assert decode_probe_payload(pkt) == msg
    assert decode_probe_payload(decode_packet(encode_packet(pkt))) == msg


# whole-packet encoding

@given(sid_lists, st.binary(max_size=64), u8)
def test_packet_bytes_roundtrip(lst, payload, tc):
    inner = make_udp_packet("fd00:0:1::100", "fd00:0:8::100", 40000, 40001, payload)
    outer = set_color(encapsulate(inner, "fcbb:0:1::1", lst), Color(tc & 1), bool(tc & 2))
    data = encode_packet(outer)
    assert len(data) == outer.size()
    assert decode_packet(data) == outer


def test_payload_len_matches_encoding():
    inner = make_udp_packet("fd00::1", "fd00::2", 1, 2, b"abc")
    outer = encapsulate(inner, "fcbb::1", sl(1, 2))
    assert outer.ip.payload_len == len(encode_packet(outer)) - 40


def test_packet_equality_ignores_stamp():
    a = _pkt()
    b = Packet(Ipv6Header(a.ip.src, a.ip.dst, 0, 64, a.ip.payload_len, a.ip.next_header),
               udp=a.udp, payload=a.payload, stamp=("x", 1))
    assert a == b
