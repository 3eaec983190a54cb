"""The relay's NB-IoT backhaul: coupling loss, coverage classes, the UE state machine
and the datagram that wraps each relayed LoRa payload.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union

from .geometry import Position, Terrain
from .mac import SetTimer, TraceNote
from .phy import NbIotMetrics, NbIotRadioParams, PathLossModel, path_loss

DATAGRAM_HEADER = struct.Struct(">HHBbQ")
DATAGRAM_HEADER_LEN = DATAGRAM_HEADER.size  # 14
MAX_DATAGRAM_PAYLOAD = 64
IP_UDP_OVERHEAD = 28
BASE_RATE_BPS = 15000.0


class LinkInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class CoverageClass:
    level: str
    repetitions: int
    cl_ceiling_db: float


CE0 = CoverageClass("CE0", 1, 144.0)
CE1 = CoverageClass("CE1", 8, 154.0)
CE2 = CoverageClass("CE2", 32, 164.0)
COVERAGE_CLASSES = (CE0, CE1, CE2)


def coverage_class_for(cl_db: float) -> CoverageClass:
    for cc in COVERAGE_CLASSES:
        if cl_db <= cc.cl_ceiling_db:
            return cc
    raise LinkInfeasible(f"coupling loss {cl_db:.2f} dB exceeds {CE2.cl_ceiling_db} dB")


def uplink_throughput(cc: CoverageClass, base_rate_bps: float = BASE_RATE_BPS) -> float:
    return base_rate_bps / cc.repetitions


def coupling_loss(bs: Position, enb: NbIotRadioParams, terrain: Terrain | None, model: PathLossModel) -> float:
    """Path loss to the eNB minus both antenna gains (terrain blockage included)."""
    loss = path_loss(model, bs, enb.enb_position, terrain, enb.carrier_hz)
    return loss - enb.antenna_gain_dbi - enb.enb_antenna_gain_dbi


def downlink_rssi(bs: Position, enb: NbIotRadioParams, terrain: Terrain | None, model: PathLossModel) -> float:
    return enb.enb_tx_power_dbm - coupling_loss(bs, enb, terrain, model)


@dataclass(frozen=True)
class RelayDatagram:
    relay_id: int
    origin_src: int
    origin_seq: int
    rssi_at_relay_dbm: int
    timestamp_ms: int
    payload: bytes

    def encode(self) -> bytes:
        if len(self.payload) > MAX_DATAGRAM_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_DATAGRAM_PAYLOAD}")
        head = DATAGRAM_HEADER.pack(
            self.relay_id, self.origin_src, self.origin_seq, self.rssi_at_relay_dbm, self.timestamp_ms
        )
        return head + self.payload

    @property
    def size(self) -> int:
        return DATAGRAM_HEADER_LEN + len(self.payload)


def make_datagram(
    payload: bytes, relay_id: int, origin_src: int, origin_seq: int, rssi_dbm: float, now_s: float
) -> RelayDatagram:
    if len(payload) > MAX_DATAGRAM_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_DATAGRAM_PAYLOAD}")
    rssi = max(-128, min(127, round(rssi_dbm)))
    return RelayDatagram(relay_id, origin_src, origin_seq, rssi, round(now_s * 1000), bytes(payload))


def encapsulate(
    payload: bytes, relay_id: int, origin_src: int, origin_seq: int, rssi_dbm: float, now_s: float
) -> bytes:
    return make_datagram(payload, relay_id, origin_src, origin_seq, rssi_dbm, now_s).encode()


def decode_datagram(data: bytes) -> RelayDatagram:
    if len(data) < DATAGRAM_HEADER_LEN:
        raise ValueError(f"{len(data)} bytes is shorter than the {DATAGRAM_HEADER_LEN}-byte header")
    if len(data) > DATAGRAM_HEADER_LEN + MAX_DATAGRAM_PAYLOAD:
        raise ValueError("datagram payload exceeds 64 bytes")
    relay_id, src, seq, rssi, ts = DATAGRAM_HEADER.unpack_from(data)
    return RelayDatagram(relay_id, src, seq, rssi, ts, bytes(data[DATAGRAM_HEADER_LEN:]))


class UdpSink:
    """Forwards delivered datagrams as real UDP packets to an external collector."""

    def __init__(self, host: str, port: int):
        self.address = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, datagram: bytes) -> None:
        self._sock.sendto(datagram, self.address)

    def close(self) -> None:
        self._sock.close()


class UePhase(str, Enum):
    DETACHED = "DETACHED"
    ATTACHING = "ATTACHING"
    IDLE = "IDLE"
    CONNECTED = "CONNECTED"


@dataclass(frozen=True)
class BackhaulConfig:
    mcl_db: float = 164.0
    base_rate_bps: float = BASE_RATE_BPS
    attach_latency_s: float = 3.0
    queue_capacity: int = 256
    reattach_backoff_s: float = 10.0
    include_ip_overhead: bool = False

    def serialized_bytes(self, d: RelayDatagram) -> int:
        return d.size + (IP_UDP_OVERHEAD if self.include_ip_overhead else 0)


@dataclass(frozen=True)
class UeState:
    config: BackhaulConfig = BackhaulConfig()
    phase: UePhase = UePhase.DETACHED
    pending: tuple[RelayDatagram, ...] = ()
    attach_started: float | None = None
    serving_metrics: NbIotMetrics | None = None
    coverage_class: CoverageClass | None = None
    last_cl_db: float | None = None
    timer_token: int = 0
    tx_token: int = 0
    reattach_pending: bool = False


# events


@dataclass(frozen=True)
class PowerOn:
    pass


@dataclass(frozen=True)
class AttachDone:
    pass


@dataclass(frozen=True)
class BhEnqueue:
    datagram: RelayDatagram


@dataclass(frozen=True)
class TxDone:
    token: int


@dataclass(frozen=True)
class LinkEval:
    cl_db: float
    metrics: NbIotMetrics | None = None


@dataclass(frozen=True)
class Timer:
    token: int


UeEvent = Union[PowerOn, AttachDone, BhEnqueue, TxDone, LinkEval, Timer]


# actions (SetTimer and TraceNote are shared with the MAC)


@dataclass(frozen=True)
class StartUplink:
    datagram: RelayDatagram
    duration_s: float
    token: int


@dataclass(frozen=True)
class UplinkComplete:
    datagram: RelayDatagram


@dataclass(frozen=True)
class DatagramDropped:
    datagram: RelayDatagram
    reason: str


UeAction = Union[SetTimer, StartUplink, UplinkComplete, DatagramDropped, TraceNote]


def tx_duration(s: UeState, d: RelayDatagram) -> float:
    assert s.coverage_class is not None
    return s.config.serialized_bytes(d) * 8 / uplink_throughput(s.coverage_class, s.config.base_rate_bps)


def _maybe_send(s: UeState) -> tuple[UeState, list[UeAction]]:
    if s.phase not in (UePhase.IDLE, UePhase.CONNECTED) or not s.pending:
        return replace(s, phase=UePhase.IDLE) if s.phase is UePhase.CONNECTED else s, []
    token = s.tx_token + 1
    head = s.pending[0]
    s = replace(s, phase=UePhase.CONNECTED, tx_token=token)
    return s, [StartUplink(head, tx_duration(s, head), token)]


def _detach(s: UeState, now: float) -> tuple[UeState, list[UeAction]]:
    token = s.timer_token + 1
    s = replace(
        s,
        phase=UePhase.DETACHED,
        timer_token=token,
        tx_token=s.tx_token + 1,  # aborts any uplink in flight
        attach_started=None,
        reattach_pending=True,
    )
    return s, [SetTimer(now + s.config.reattach_backoff_s, token)]


def _power_on(s: UeState, now: float) -> tuple[UeState, list[UeAction]]:
    token = s.timer_token + 1
    s = replace(s, phase=UePhase.ATTACHING, attach_started=now, timer_token=token, reattach_pending=False)
    return s, [SetTimer(now + s.config.attach_latency_s, token)]


def _attach_complete(s: UeState, now: float) -> tuple[UeState, list[UeAction]]:
    if s.last_cl_db is None or s.last_cl_db > s.config.mcl_db or s.coverage_class is None:
        return _detach(s, now)
    return _maybe_send(replace(s, phase=UePhase.IDLE, attach_started=None))


def ue_transition(s: UeState, event: UeEvent, now: float) -> tuple[UeState, list[UeAction]]:
    if isinstance(event, LinkEval):
        s = replace(s, last_cl_db=event.cl_db, serving_metrics=event.metrics or s.serving_metrics)
        if event.cl_db > s.config.mcl_db:
            s = replace(s, coverage_class=None)
            if s.phase is UePhase.DETACHED:
                return s, []
            return _detach(s, now)
        return replace(s, coverage_class=coverage_class_for(event.cl_db)), []

    if isinstance(event, PowerOn):
        if s.phase is not UePhase.DETACHED:
            return s, [TraceNote(f"power_on in {s.phase.value} ignored")]
        return _power_on(s, now)

    if isinstance(event, (AttachDone, Timer)):
        if isinstance(event, Timer) and event.token != s.timer_token:
            return s, []
        if s.phase is UePhase.ATTACHING:
            return _attach_complete(s, now)
        if s.phase is UePhase.DETACHED and s.reattach_pending and isinstance(event, Timer):
            return _power_on(s, now)
        return s, [TraceNote(f"{type(event).__name__} in {s.phase.value} ignored")]

    if isinstance(event, BhEnqueue):
        if len(s.pending) >= s.config.queue_capacity:
            return s, [DatagramDropped(event.datagram, "queue_overflow")]
        s = replace(s, pending=s.pending + (event.datagram,))
        if s.phase is UePhase.IDLE:
            return _maybe_send(s)
        return s, []

    if isinstance(event, TxDone):
        if s.phase is not UePhase.CONNECTED or event.token != s.tx_token:
            return s, []  # aborted by a detach
        head = s.pending[0]
        s, actions = _maybe_send(replace(s, pending=s.pending[1:]))
        return s, [UplinkComplete(head), *actions]

    return s, [TraceNote(f"unknown event {event!r}")]
