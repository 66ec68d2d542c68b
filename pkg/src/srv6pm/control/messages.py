"""Southbound RPC messages (SRv6Manager and SRv6PM services).

Message and field names follow the protobuf definitions of the southbound
API, including the ``retriveFlowMonitoringResults`` spelling. Fields marked
*extension* below are not part of those definitions.

Serialization: ``encode_message`` produces UTF-8 JSON of the form
``{"type": <message name>, "fields": {...}}`` with fields in declaration
order, enums by value, nested messages as objects. ``decode_message`` is its
exact inverse. The transport in this package is in-process; the encoding
exists so any remote transport has a fixed, tested byte contract.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field

from ..errors import FormatError, InvalidOptions
from .loss import LossReport


class StatusCode(enum.Enum):
    STATUS_SUCCESS = "STATUS_SUCCESS"
    STATUS_NOT_FOUND = "STATUS_NOT_FOUND"
    STATUS_ALREADY_EXISTS = "STATUS_ALREADY_EXISTS"
    STATUS_ALREADY_RUNNING = "STATUS_ALREADY_RUNNING"
    STATUS_NOT_RUNNING = "STATUS_NOT_RUNNING"
    STATUS_INVALID_ARGUMENT = "STATUS_INVALID_ARGUMENT"
    STATUS_UNKNOWN_SESSION = "STATUS_UNKNOWN_SESSION"
    STATUS_INTERNAL_ERROR = "STATUS_INTERNAL_ERROR"


class MeasurementProtocol(enum.Enum):
    TWAMP = "TWAMP"
    STAMP = "STAMP"


class AuthenticationMode(enum.Enum):
    UNAUTHENTICATED = "UNAUTHENTICATED"
    HMAC_SHA_256 = "HMAC_SHA_256"


class MeasurementType(enum.Enum):
    DELAY = "DELAY"
    LOSS = "LOSS"


class TimestampFormat(enum.Enum):
    PTPv2 = "PTPv2"
    NTP = "NTP"


class MeasurementDelayMode(enum.Enum):
    ONE_WAY = "ONE_WAY"
    TWO_WAY = "TWO_WAY"
    LOOPBACK = "LOOPBACK"


class MeasurementLossMode(enum.Enum):
    INFERRED = "INFERRED"
    DIRECT = "DIRECT"


RESPONSE_MODES = ("in_band", "out_of_band")


@dataclass
class SRv6Path:
    destination: str
    sr_path: list[str] = field(default_factory=list)
    encapmode: str = "encap"
    device: str = ""
    table: int = 0


@dataclass
class SRv6Behavior:
    segment: str
    action: str = ""
    nexthop: str = ""
    table: int = 0
    interface: str = ""
    segs: list[str] = field(default_factory=list)
    device: str = ""
    localsid_table: int = 0


@dataclass
class SRv6ManagerRequest:
    entity_type: str = "path"  # "path" | "behavior"
    paths: list[SRv6Path] = field(default_factory=list)
    behaviors: list[SRv6Behavior] = field(default_factory=list)


@dataclass
class SRv6ManagerReply:
    status: StatusCode = StatusCode.STATUS_SUCCESS
    paths: list[SRv6Path] = field(default_factory=list)
    behaviors: list[SRv6Behavior] = field(default_factory=list)
    message: str = ""


@dataclass
class ColorOptions:
    interval_duration: float = 10.0
    delay_margin: float = 0.0  # 0 means interval_duration / 2
    number_of_colors: int = 2

    @property
    def margin(self) -> float:
        return self.delay_margin if self.delay_margin else self.interval_duration / 2

    def validate(self) -> None:
        if self.number_of_colors != 2:
            raise InvalidOptions("number_of_colors must be 2")
        if not self.interval_duration > 0:
            raise InvalidOptions("interval_duration must be positive")
        if not 0 < self.margin < self.interval_duration:
            raise InvalidOptions("delay_margin must lie strictly between 0 and interval_duration")

    @property
    def interval_ns(self) -> int:
        return round(self.interval_duration * 1e9)

    @property
    def margin_ns(self) -> int:
        return round(self.margin * 1e9)


@dataclass
class SenderOptions:
    ss_udp_port: int = 50000
    refl_udp_port: int = 50001
    measurement_protocol: MeasurementProtocol = MeasurementProtocol.TWAMP
    authentication_mode: AuthenticationMode = AuthenticationMode.UNAUTHENTICATED
    measurement_type: MeasurementType = MeasurementType.LOSS
    timestamp_format: TimestampFormat = TimestampFormat.PTPv2
    measurement_delay_mode: MeasurementDelayMode = MeasurementDelayMode.ONE_WAY
    padding_mbz: int = 0
    measurement_loss_mode: MeasurementLossMode = MeasurementLossMode.INFERRED
    authentication_key: str = ""

    def validate(self) -> None:
        _validate_common(self)


@dataclass
class ReflectorOptions:
    ss_udp_port: int = 50000
    refl_udp_port: int = 50001
    measurement_protocol: MeasurementProtocol = MeasurementProtocol.TWAMP
    authentication_mode: AuthenticationMode = AuthenticationMode.UNAUTHENTICATED
    measurement_type: MeasurementType = MeasurementType.LOSS
    measurement_loss_mode: MeasurementLossMode = MeasurementLossMode.INFERRED
    authentication_key: str = ""

    def validate(self) -> None:
        _validate_common(self)


def _validate_common(opts) -> None:
    for name in ("ss_udp_port", "refl_udp_port"):
        port = getattr(opts, name)
        if not isinstance(port, int) or not 0 < port < 65536:
            raise InvalidOptions(f"{name} must be a UDP port, got {port!r}")
    if opts.ss_udp_port == opts.refl_udp_port:
        raise InvalidOptions("ss_udp_port and refl_udp_port must differ")
    if opts.measurement_protocol is not MeasurementProtocol.TWAMP:
        raise InvalidOptions("only TWAMP is implemented")
    if opts.authentication_mode is not AuthenticationMode.UNAUTHENTICATED:
        raise InvalidOptions("only unauthenticated mode is implemented")
    if opts.measurement_type is not MeasurementType.LOSS:
        raise InvalidOptions("only loss measurement is implemented")


@dataclass
class StartFlowMonitoringSenderRequest:
    measure_id: int
    sdlist: str
    sdlistreverse: str
    in_interfaces: list[str] = field(default_factory=list)
    out_interfaces: list[str] = field(default_factory=list)
    sender_options: SenderOptions = field(default_factory=SenderOptions)
    color_options: ColorOptions = field(default_factory=ColorOptions)
    punt_sid: str = ""  # extension: End.OP SID at the reflector
    response_mode: str = "in_band"  # extension: "in_band" | "out_of_band"


@dataclass
class StartFlowMonitoringSenderReply:
    status: StatusCode = StatusCode.STATUS_SUCCESS
    message: str = ""


@dataclass
class StartFlowMonitoringReflectorRequest:
    measure_id: int
    sdlist: str
    sdlistreverse: str
    in_interfaces: list[str] = field(default_factory=list)
    out_interfaces: list[str] = field(default_factory=list)
    reflector_options: ReflectorOptions = field(default_factory=ReflectorOptions)
    color_options: ColorOptions = field(default_factory=ColorOptions)
    punt_sid: str = ""  # extension: End.OP SID at the sender
    response_mode: str = "in_band"  # extension


@dataclass
class StartFlowMonitoringReflectorReply:
    status: StatusCode = StatusCode.STATUS_SUCCESS
    message: str = ""


@dataclass
class StopFlowMonitoringRequest:
    sdlist: str


@dataclass
class StopFlowMonitoringReply:
    status: StatusCode = StatusCode.STATUS_SUCCESS
    message: str = ""


@dataclass
class RetriveFlowMonitoringDataRequest:
    sdlist: str


@dataclass
class ProbeLogRecord:
    measure_id: int
    sender_seq: int
    epoch: int
    arrived_at: int
    early: bool = False


@dataclass
class FlowMonitoringDataResponse:
    status: StatusCode = StatusCode.STATUS_SUCCESS
    measure_id: int = 0
    role: str = ""
    state: str = ""
    measurement_data: list[LossReport] = field(default_factory=list)
    probe_log: list[ProbeLogRecord] = field(default_factory=list)  # extension
    message: str = ""


MESSAGE_TYPES = {cls.__name__: cls for cls in (
    SRv6Path, SRv6Behavior, SRv6ManagerRequest, SRv6ManagerReply,
    ColorOptions, SenderOptions, ReflectorOptions,
    StartFlowMonitoringSenderRequest, StartFlowMonitoringSenderReply,
    StartFlowMonitoringReflectorRequest, StartFlowMonitoringReflectorReply,
    StopFlowMonitoringRequest, StopFlowMonitoringReply,
    RetriveFlowMonitoringDataRequest, ProbeLogRecord, FlowMonitoringDataResponse,
)}

_NESTED = {
    ("SRv6ManagerRequest", "paths"): SRv6Path,
    ("SRv6ManagerRequest", "behaviors"): SRv6Behavior,
    ("SRv6ManagerReply", "paths"): SRv6Path,
    ("SRv6ManagerReply", "behaviors"): SRv6Behavior,
    ("StartFlowMonitoringSenderRequest", "sender_options"): SenderOptions,
    ("StartFlowMonitoringSenderRequest", "color_options"): ColorOptions,
    ("StartFlowMonitoringReflectorRequest", "reflector_options"): ReflectorOptions,
    ("StartFlowMonitoringReflectorRequest", "color_options"): ColorOptions,
    ("FlowMonitoringDataResponse", "measurement_data"): LossReport,
    ("FlowMonitoringDataResponse", "probe_log"): ProbeLogRecord,
}

_ENUMS = {cls.__name__: cls for cls in (
    StatusCode, MeasurementProtocol, AuthenticationMode, MeasurementType,
    TimestampFormat, MeasurementDelayMode, MeasurementLossMode)}


def _to_plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, LossReport):
        return value.to_dict()
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _from_plain(cls, data: dict):
    if cls is LossReport:
        return LossReport.from_dict(data)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        raw = data[f.name]
        nested = _NESTED.get((cls.__name__, f.name))
        ftype = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if nested is not None:
            kwargs[f.name] = ([_from_plain(nested, v) for v in raw] if isinstance(raw, list)
                              else _from_plain(nested, raw))
        elif ftype in _ENUMS:
            kwargs[f.name] = _ENUMS[ftype](raw)
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def encode_message(msg) -> bytes:
    name = type(msg).__name__
    if name not in MESSAGE_TYPES:
        raise TypeError(f"{name} is not a southbound message")
    return json.dumps({"type": name, "fields": _to_plain(msg)},
                      separators=(",", ":")).encode()


def decode_message(data: bytes):
    try:
        doc = json.loads(data)
        cls = MESSAGE_TYPES[doc["type"]]
        return _from_plain(cls, doc["fields"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"undecodable southbound message: {exc}") from exc
