"""Packet structures and bit-exact encodings.

Covers the outer IPv6 header, the Segment Routing Header, UDP, the two
DS-field bits used for alternate marking, and the TWAMP-light loss
measurement Query/Response messages.

LM Query, 16 bytes, network byte order::

    0      4              12     13     14     15
    | seq  | tx_counter   |block |flags |ctrl  |rsvd|

LM Response, 40 bytes::

    0      4              12     13     14     15   16           24     28           36     37     40
    | sseq | sender_tx    |sblock|flags |ctrl  |rsvd| refl_rx    | rseq | refl_tx    |rblock| rsvd |
"""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import struct
from dataclasses import dataclass, field
from ipaddress import IPv6Address

from .errors import (
    InvalidSidList,
    LengthError,
    MalformedPacket,
    NoSegmentsLeft,
    PortsEqual,
    ReservedNonZero,
    UnknownFlags,
)

MAX_SIDS = 16

PROTO_IPV6 = 41
PROTO_ROUTING = 43
PROTO_UDP = 17
SRH_ROUTING_TYPE = 4

IPV6_HEADER_LEN = 40
UDP_HEADER_LEN = 8

COLOR_BIT = 0x01
MONITORED_BIT = 0x02
MARKING_MASK = COLOR_BIT | MONITORED_BIT

FLAG_COUNTER_FORMAT = 0x01
FLAG_BYTE_COUNTING = 0x02
KNOWN_FLAGS = FLAG_COUNTER_FORMAT | FLAG_BYTE_COUNTING

CTRL_OUT_OF_BAND = 0
CTRL_IN_BAND = 1

LM_QUERY_LEN = 16
LM_RESPONSE_LEN = 40

_QUERY = struct.Struct("!IQBBBB")
_RESPONSE = struct.Struct("!IQBBBBQIQB3s")
_IPV6 = struct.Struct("!IHBB16s16s")
_SRH = struct.Struct("!BBBBBBH")
_UDP = struct.Struct("!HHHH")

SegmentId = IPv6Address


def parse_sid(text) -> IPv6Address:
    """Parse a segment identifier from its IPv6 textual form (or an int)."""
    if isinstance(text, IPv6Address):
        return text
    try:
        return IPv6Address(text)
    except ipaddress.AddressValueError as exc:
        raise InvalidSidList(f"not an IPv6 segment id: {text!r}") from exc


class SidList:
    """Ordered, immutable list of 1..16 segment ids.

    Equality is order-sensitive. The textual form is the comma-separated list
    of canonical IPv6 addresses.
    """

    __slots__ = ("segments", "_key", "_hash")

    def __init__(self, segments):
        if isinstance(segments, str):
            segments = [s for s in segments.split(",") if s.strip()]
        segs = tuple(parse_sid(s.strip() if isinstance(s, str) else s) for s in segments)
        if not 1 <= len(segs) <= MAX_SIDS:
            raise InvalidSidList(f"SID list length must be 1..{MAX_SIDS}, got {len(segs)}")
        self.segments = segs
        self._key = tuple(int(s) for s in segs)
        self._hash = hash(self._key)

    @classmethod
    def parse(cls, text: str) -> SidList:
        return cls(text)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, index):
        return self.segments[index]

    def __eq__(self, other):
        if not isinstance(other, SidList):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return self._hash

    def __str__(self):
        return ",".join(str(s) for s in self.segments)

    def __repr__(self):
        return f"SidList({str(self)!r})"

    @property
    def last(self) -> IPv6Address:
        return self.segments[-1]

    def with_last(self, sid) -> SidList:
        return SidList(self.segments[:-1] + (parse_sid(sid),))


class Color(enum.IntEnum):
    R = 0
    B = 1

    def other(self) -> Color:
        return Color(self ^ 1)

    @classmethod
    def of_epoch(cls, epoch: int) -> Color:
        return cls(epoch & 1)


@dataclass(slots=True)
class Ipv6Header:
    src: IPv6Address
    dst: IPv6Address
    traffic_class: int = 0
    hop_limit: int = 64
    payload_len: int = 0
    next_header: int = PROTO_UDP
    flow_label: int = 0


@dataclass(slots=True)
class SrhHeader:
    """SRH with the SID list kept in logical (path) order.

    On the wire, and for ``segment_at``, the list is reversed: index 0 is the
    last segment of the path, as in RFC 8754.
    """

    sid_list: SidList
    segments_left: int
    next_header: int = PROTO_IPV6

    def __post_init__(self):
        if not 0 <= self.segments_left < len(self.sid_list):
            raise MalformedPacket(
                f"segments_left={self.segments_left} out of range for {len(self.sid_list)} SIDs")

    def segment_at(self, index: int) -> IPv6Address:
        return self.sid_list.segments[len(self.sid_list) - 1 - index]

    @property
    def wire_len(self) -> int:
        return 8 + 16 * len(self.sid_list)


@dataclass(slots=True)
class UdpHeader:
    src_port: int
    dst_port: int
    length: int = UDP_HEADER_LEN
    checksum: int = 0


@dataclass(slots=True)
class Packet:
    """An IPv6 packet, possibly carrying an SRH and an encapsulated inner packet.

    ``stamp`` is simulator bookkeeping (flow and epoch attribution for the drop
    oracle); it is never encoded and does not take part in equality.
    """

    ip: Ipv6Header
    srh: SrhHeader | None = None
    udp: UdpHeader | None = None
    payload: bytes = b""
    inner: Packet | None = None
    stamp: tuple | None = field(default=None, compare=False)

    def size(self) -> int:
        return IPV6_HEADER_LEN + self._after_ip_len()

    def _after_ip_len(self) -> int:
        n = self.srh.wire_len if self.srh is not None else 0
        if self.inner is not None:
            return n + self.inner.size()
        if self.udp is not None:
            n += UDP_HEADER_LEN
        return n + len(self.payload)


DataPacket = Packet
ProbePacket = Packet


def _check_uint(name, value, bits):
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise ValueError(f"{name} must be a {bits}-bit unsigned integer, got {value!r}")


@dataclass(frozen=True)
class LmQuery:
    sender_seq: int = 0
    sender_tx_counter: int = 0
    block_number: int = 0
    flags: int = 0
    ctrl_code: int = CTRL_OUT_OF_BAND

    def __post_init__(self):
        _check_uint("sender_seq", self.sender_seq, 32)
        _check_uint("sender_tx_counter", self.sender_tx_counter, 64)
        _check_uint("block_number", self.block_number, 8)
        _check_uint("flags", self.flags, 8)
        _check_uint("ctrl_code", self.ctrl_code, 8)

    @property
    def in_band(self) -> bool:
        return self.ctrl_code == CTRL_IN_BAND


@dataclass(frozen=True)
class LmResponse:
    sender_seq: int = 0
    sender_tx_counter: int = 0
    sender_block_number: int = 0
    reflector_rx_counter: int = 0
    reflector_seq: int = 0
    reflector_tx_counter: int = 0
    reflector_block_number: int = 0
    flags: int = 0
    ctrl_code: int = CTRL_OUT_OF_BAND

    def __post_init__(self):
        _check_uint("sender_seq", self.sender_seq, 32)
        _check_uint("sender_tx_counter", self.sender_tx_counter, 64)
        _check_uint("sender_block_number", self.sender_block_number, 8)
        _check_uint("reflector_rx_counter", self.reflector_rx_counter, 64)
        _check_uint("reflector_seq", self.reflector_seq, 32)
        _check_uint("reflector_tx_counter", self.reflector_tx_counter, 64)
        _check_uint("reflector_block_number", self.reflector_block_number, 8)
        _check_uint("flags", self.flags, 8)
        _check_uint("ctrl_code", self.ctrl_code, 8)

    @property
    def in_band(self) -> bool:
        return self.ctrl_code == CTRL_IN_BAND

    def echoes(self, q: LmQuery) -> bool:
        return (self.sender_seq == q.sender_seq
                and self.sender_tx_counter == q.sender_tx_counter
                and self.sender_block_number == q.block_number)


def encode_lm_query(q: LmQuery) -> bytes:
    if q.flags & ~KNOWN_FLAGS:
        raise UnknownFlags(f"unknown flag bits set: {q.flags:#04x}")
    return _QUERY.pack(q.sender_seq, q.sender_tx_counter, q.block_number,
                       q.flags, q.ctrl_code, 0)


def decode_lm_query(data: bytes) -> LmQuery:
    if len(data) != LM_QUERY_LEN:
        raise LengthError(f"LM query must be {LM_QUERY_LEN} bytes, got {len(data)}")
    seq, tx, block, flags, ctrl, reserved = _QUERY.unpack(data)
    if reserved:
        raise ReservedNonZero("LM query reserved byte is not zero")
    return LmQuery(seq, tx, block, flags, ctrl)


def encode_lm_response(r: LmResponse) -> bytes:
    if r.flags & ~KNOWN_FLAGS:
        raise UnknownFlags(f"unknown flag bits set: {r.flags:#04x}")
    return _RESPONSE.pack(r.sender_seq, r.sender_tx_counter, r.sender_block_number,
                          r.flags, r.ctrl_code, 0, r.reflector_rx_counter,
                          r.reflector_seq, r.reflector_tx_counter,
                          r.reflector_block_number, b"\x00\x00\x00")


def decode_lm_response(data: bytes) -> LmResponse:
    if len(data) != LM_RESPONSE_LEN:
        raise LengthError(f"LM response must be {LM_RESPONSE_LEN} bytes, got {len(data)}")
    (sseq, stx, sblock, flags, ctrl, rsvd, rrx, rseq, rtx, rblock,
     rsvd_tail) = _RESPONSE.unpack(data)
    if rsvd or any(rsvd_tail):
        raise ReservedNonZero("LM response reserved bytes are not zero")
    return LmResponse(sseq, stx, sblock, rrx, rseq, rtx, rblock, flags, ctrl)


# DS-field marking

def set_color(pkt: Packet, color: Color, monitored: bool) -> Packet:
    tc = pkt.ip.traffic_class & ~MARKING_MASK & 0xFF
    tc |= int(color) & COLOR_BIT
    if monitored:
        tc |= MONITORED_BIT
    return dataclasses.replace(pkt, ip=dataclasses.replace(pkt.ip, traffic_class=tc))


def get_color(pkt: Packet) -> tuple[Color, bool]:
    tc = pkt.ip.traffic_class
    return Color(tc & COLOR_BIT), bool(tc & MONITORED_BIT)


# SRH processing

def srh_advance(pkt: Packet) -> Packet:
    srh = pkt.srh
    if srh is None or srh.segments_left == 0:
        raise NoSegmentsLeft("no segments left to advance")
    sl = srh.segments_left - 1
    new_srh = SrhHeader(srh.sid_list, sl, srh.next_header)
    new_ip = dataclasses.replace(pkt.ip, dst=new_srh.segment_at(sl))
    return dataclasses.replace(pkt, ip=new_ip, srh=new_srh)


def make_udp_packet(src, dst, src_port: int, dst_port: int, payload: bytes = b"",
                    traffic_class: int = 0, hop_limit: int = 64) -> Packet:
    udp = UdpHeader(src_port, dst_port, UDP_HEADER_LEN + len(payload))
    ip = Ipv6Header(parse_sid(src), parse_sid(dst), traffic_class, hop_limit,
                    UDP_HEADER_LEN + len(payload), PROTO_UDP)
    return Packet(ip, udp=udp, payload=bytes(payload))


def encapsulate(inner: Packet, src, sid_list: SidList, hop_limit: int = 64) -> Packet:
    """Wrap ``inner`` in an outer IPv6 header plus an SRH carrying ``sid_list``."""
    srh = SrhHeader(sid_list, len(sid_list) - 1, PROTO_IPV6)
    ip = Ipv6Header(parse_sid(src), sid_list[0], 0, hop_limit,
                    srh.wire_len + inner.size(), PROTO_ROUTING)
    return Packet(ip, srh=srh, inner=inner, stamp=inner.stamp)


def build_probe_packet(kind: str, payload, fwd_sids: SidList, punt_sid, ports,
                       src, hop_limit: int = 64) -> Packet:
    """Build a query or response probe steered along ``fwd_sids``.

    The final SID is replaced by ``punt_sid`` so that the far end hands the
    UDP payload to its measurement agent instead of decapsulating.
    """
    src_port, dst_port = ports
    if src_port == dst_port:
        raise PortsEqual(f"probe source and destination ports are both {src_port}")
    if kind == "query":
        if not isinstance(payload, LmQuery):
            raise TypeError("query probe needs an LmQuery payload")
        body = encode_lm_query(payload)
    elif kind == "response":
        if not isinstance(payload, LmResponse):
            raise TypeError("response probe needs an LmResponse payload")
        body = encode_lm_response(payload)
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    sids = fwd_sids.with_last(punt_sid)
    srh = SrhHeader(sids, len(sids) - 1, PROTO_UDP)
    udp = UdpHeader(src_port, dst_port, UDP_HEADER_LEN + len(body))
    ip = Ipv6Header(parse_sid(src), sids[0], 0, hop_limit,
                    srh.wire_len + UDP_HEADER_LEN + len(body), PROTO_ROUTING)
    return Packet(ip, srh=srh, udp=udp, payload=body)


def decode_probe_payload(pkt: Packet):
    """Decode the LM message carried by a probe, choosing by payload length."""
    if len(pkt.payload) == LM_QUERY_LEN:
        return decode_lm_query(pkt.payload)
    if len(pkt.payload) == LM_RESPONSE_LEN:
        return decode_lm_response(pkt.payload)
    raise LengthError(f"no LM message has length {len(pkt.payload)}")


# byte encoding of whole packets

def encode_packet(pkt: Packet) -> bytes:
    parts = []
    after = pkt._after_ip_len()
    ip = pkt.ip
    first = (6 << 28) | (ip.traffic_class << 20) | ip.flow_label
    parts.append(_IPV6.pack(first, after, ip.next_header, ip.hop_limit,
                            ip.src.packed, ip.dst.packed))
    if pkt.srh is not None:
        srh = pkt.srh
        n = len(srh.sid_list)
        parts.append(_SRH.pack(srh.next_header, 2 * n, SRH_ROUTING_TYPE,
                               srh.segments_left, n - 1, 0, 0))
        parts.extend(s.packed for s in reversed(srh.sid_list.segments))
    if pkt.inner is not None:
        parts.append(encode_packet(pkt.inner))
    else:
        if pkt.udp is not None:
            u = pkt.udp
            parts.append(_UDP.pack(u.src_port, u.dst_port,
                                   UDP_HEADER_LEN + len(pkt.payload), u.checksum))
        parts.append(pkt.payload)
    return b"".join(parts)


def decode_packet(data: bytes) -> Packet:
    if len(data) < IPV6_HEADER_LEN:
        raise MalformedPacket("truncated IPv6 header")
    first, plen, nh, hlim, src, dst = _IPV6.unpack_from(data, 0)
    if first >> 28 != 6:
        raise MalformedPacket("not an IPv6 packet")
    if plen != len(data) - IPV6_HEADER_LEN:
        raise MalformedPacket(f"payload length {plen} != {len(data) - IPV6_HEADER_LEN}")
    ip = Ipv6Header(IPv6Address(src), IPv6Address(dst), (first >> 20) & 0xFF, hlim,
                    plen, nh, first & 0xFFFFF)
    rest = data[IPV6_HEADER_LEN:]
    srh = None
    if nh == PROTO_ROUTING:
        if len(rest) < 8:
            raise MalformedPacket("truncated SRH")
        snh, ext_len, rtype, sl, last_entry, _flags, _tag = _SRH.unpack_from(rest, 0)
        n = last_entry + 1
        if rtype != SRH_ROUTING_TYPE or ext_len != 2 * n or len(rest) < 8 + 16 * n:
            raise MalformedPacket("inconsistent SRH")
        stored = [IPv6Address(rest[8 + 16 * i: 24 + 16 * i]) for i in range(n)]
        srh = SrhHeader(SidList(reversed(stored)), sl, snh)
        rest = rest[8 + 16 * n:]
        nh = snh
    if nh == PROTO_IPV6:
        return Packet(ip, srh=srh, inner=decode_packet(rest))
    if nh == PROTO_UDP:
        if len(rest) < UDP_HEADER_LEN:
            raise MalformedPacket("truncated UDP header")
        sport, dport, ulen, csum = _UDP.unpack_from(rest, 0)
        if ulen != len(rest):
            raise MalformedPacket(f"UDP length {ulen} != {len(rest)}")
        return Packet(ip, srh=srh, udp=UdpHeader(sport, dport, ulen, csum),
                      payload=bytes(rest[UDP_HEADER_LEN:]))
    return Packet(ip, srh=srh, payload=bytes(rest))
