"""Ad-hoc LoRa link layer: duty-cycle ledger, random backoff and stop-and-wait ARQ.

The MAC is a pure state machine. ``mac_transition`` never mutates its input
state; all timing comes from the caller through ``now`` and the actions it
returns (start a transmission, arm a timer, hand a payload up, report a drop).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Union

from .frame import BROADCAST, FLAG_DATA, MAX_FRAME_LEN, MAX_PAYLOAD, Frame, ack_for
from .phy import LoRaRadioParams, lora_airtime
from .rng import RngStream

DUTY_WINDOW_S = 3600.0
DUTY_BUDGET_S = 36.0
DEDUP_WINDOW = 8
_EPS = 1e-9


class DutyCycleExceeded(ValueError):
    pass


@dataclass(frozen=True)
class DutyCycleLedger:
    """Transmissions (start, airtime) inside the trailing window."""

    entries: tuple[tuple[float, float], ...] = ()
    window_s: float = DUTY_WINDOW_S
    budget_s: float = DUTY_BUDGET_S

    def used(self, t: float) -> float:
        """Airtime counted against a transmission starting at ``t``."""
        # written as s + window > t so the slide-out instants computed below compare exactly
        return sum(a for s, a in self.entries if s + self.window_s > t)

    def admit(self, start: float, airtime: float) -> DutyCycleLedger:
        kept = tuple(e for e in self.entries if e[0] + self.window_s > start)
        return replace(self, entries=kept + ((start, airtime),))


def duty_next_allowed(ledger: DutyCycleLedger, airtime: float, now: float) -> float:
    """Earliest t >= now at which ``airtime`` more keeps the window within budget."""
    if not airtime > 0:
        raise ValueError("airtime must be positive")
    if airtime > ledger.budget_s:
        raise DutyCycleExceeded(f"{airtime} s alone exceeds the {ledger.budget_s} s budget")
    # usage only drops when an entry slides out, so those instants are the only candidates
    candidates = [now] + sorted(s + ledger.window_s for s, _ in ledger.entries if s + ledger.window_s > now)
    for t in candidates:
        if ledger.used(t) + airtime <= ledger.budget_s + _EPS:
            return t
    raise AssertionError("unreachable: an empty window always admits")


def backoff_delay(stream: RngStream, attempt: int, slot_s: float, max_backoff_s: float) -> float:
    """Uniform draw in [0, min(2**attempt * slot, max_backoff)] at the stream's position."""
    if attempt < 0:
        raise ValueError("attempt must be >= 0")
    window = min(2.0 ** min(attempt, 64) * slot_s, max_backoff_s)
    return stream.uniform() * window


class Phase(str, Enum):
    IDLE = "IDLE"
    BACKOFF = "BACKOFF"
    TX = "TX"
    AWAIT_ACK = "AWAIT_ACK"


@dataclass(frozen=True)
class MacConfig:
    node_id: int
    radio: LoRaRadioParams = LoRaRadioParams()
    max_retries: int = 4
    queue_capacity: int = 64
    random_backoff: bool = True
    max_backoff_slots: int = 32
    processing_guard_s: float = 0.05

    @cached_property
    def slot_s(self) -> float:
        """Airtime of a maximal frame at this radio's settings."""
        return lora_airtime(self.radio, MAX_FRAME_LEN)

    @cached_property
    def ack_airtime_s(self) -> float:
        return lora_airtime(self.radio, Frame(0, 0, 0).wire_size)

    @cached_property
    def ack_timeout_s(self) -> float:
        return self.ack_airtime_s + 2 * self.processing_guard_s

    @property
    def max_backoff_s(self) -> float:
        return self.max_backoff_slots * self.slot_s

    def airtime(self, frame: Frame) -> float:
        return lora_airtime(self.radio, frame.wire_size)


# events


@dataclass(frozen=True)
class Enqueue:
    payload: bytes
    dst: int


@dataclass(frozen=True)
class PhyTxDone:
    frame: Frame


@dataclass(frozen=True)
class PhyRx:
    frame: Frame


@dataclass(frozen=True)
class TimerFired:
    token: int


MacEvent = Union[Enqueue, PhyTxDone, PhyRx, TimerFired]


# actions


@dataclass(frozen=True)
class StartTx:
    frame: Frame
    at_time: float
    airtime: float


@dataclass(frozen=True)
class SetTimer:
    at_time: float
    token: int


@dataclass(frozen=True)
class DeliverUp:
    payload: bytes
    src: int
    seq: int


@dataclass(frozen=True)
class DropNotice:
    frame: Frame
    reason: str


@dataclass(frozen=True)
class TraceNote:
    message: str


MacAction = Union[StartTx, SetTimer, DeliverUp, DropNotice, TraceNote]


@dataclass(frozen=True)
class MacState:
    config: MacConfig
    rng: RngStream
    phase: Phase = Phase.IDLE
    tx_queue: tuple[Frame, ...] = ()
    current_attempt: int = 0
    next_seq: int = 0
    dedup_window: dict[int, tuple[int, ...]] = field(default_factory=dict)
    duty_ledger: DutyCycleLedger = DutyCycleLedger()
    timer_token: int = 0

    @property
    def in_flight(self) -> Frame | None:
        return self.tx_queue[0] if self.tx_queue and self.phase is not Phase.IDLE else None


def new_mac(config: MacConfig, rng: RngStream) -> MacState:
    return MacState(config=config, rng=rng)


def _schedule_attempt(s: MacState, now: float) -> tuple[MacState, list[MacAction]]:
    cfg = s.config
    rng = s.rng
    delay = 0.0
    if cfg.random_backoff:
        delay = backoff_delay(rng, s.current_attempt, cfg.slot_s, cfg.max_backoff_s)
        rng = rng.advance()
    at = duty_next_allowed(s.duty_ledger, cfg.airtime(s.tx_queue[0]), now + delay)
    token = s.timer_token + 1
    return replace(s, phase=Phase.BACKOFF, rng=rng, timer_token=token), [SetTimer(at, token)]


def _finish_head(s: MacState, now: float) -> tuple[MacState, list[MacAction]]:
    """Retire the head frame and start on the next one, if any."""
    s = replace(s, tx_queue=s.tx_queue[1:], current_attempt=0, timer_token=s.timer_token + 1)
    if s.tx_queue:
        return _schedule_attempt(s, now)
    return replace(s, phase=Phase.IDLE), []


def _on_enqueue(s: MacState, ev: Enqueue, now: float) -> tuple[MacState, list[MacAction]]:
    cfg = s.config
    frame = Frame(src=cfg.node_id, dst=ev.dst, seq=s.next_seq, flags=FLAG_DATA, payload=bytes(ev.payload))
    if len(ev.payload) > MAX_PAYLOAD:
        return s, [DropNotice(frame, "oversize")]
    if len(s.tx_queue) >= cfg.queue_capacity:
        return s, [DropNotice(frame, "queue_full")]
    s = replace(s, tx_queue=s.tx_queue + (frame,), next_seq=(s.next_seq + 1) % 256)
    if s.phase is Phase.IDLE:
        return _schedule_attempt(s, now)
    return s, []


def _on_timer(s: MacState, ev: TimerFired, now: float) -> tuple[MacState, list[MacAction]]:
    if ev.token != s.timer_token:
        return s, []  # superseded timer
    cfg = s.config
    if s.phase is Phase.BACKOFF:
        head = s.tx_queue[0]
        airtime = cfg.airtime(head)
        allowed = duty_next_allowed(s.duty_ledger, airtime, now)
        if allowed > now + _EPS:
            # an ACK consumed budget while we were backing off
            token = s.timer_token + 1
            return replace(s, timer_token=token), [SetTimer(allowed, token)]
        s = replace(s, phase=Phase.TX, duty_ledger=s.duty_ledger.admit(now, airtime))
        return s, [StartTx(head, now, airtime)]
    if s.phase is Phase.AWAIT_ACK:
        attempt = s.current_attempt + 1
        if attempt > cfg.max_retries:
            head = s.tx_queue[0]
            s, actions = _finish_head(s, now)
            return s, [DropNotice(head, "exhausted"), *actions]
        return _schedule_attempt(replace(s, current_attempt=attempt), now)
    return s, [TraceNote(f"timer in {s.phase.value} ignored")]


def _on_tx_done(s: MacState, ev: PhyTxDone, now: float) -> tuple[MacState, list[MacAction]]:
    if ev.frame.is_ack:
        return s, []
    if s.phase is not Phase.TX or not s.tx_queue or ev.frame != s.tx_queue[0]:
        return s, [TraceNote("tx_done for a frame not in flight")]
    if ev.frame.is_broadcast:
        return _finish_head(s, now)
    token = s.timer_token + 1
    s = replace(s, phase=Phase.AWAIT_ACK, timer_token=token)
    return s, [SetTimer(now + s.config.ack_timeout_s, token)]


def _on_rx(s: MacState, ev: PhyRx, now: float) -> tuple[MacState, list[MacAction]]:
    f = ev.frame
    me = s.config.node_id
    if f.dst not in (me, BROADCAST):
        return s, []  # overheard traffic for someone else
    if f.is_ack:
        head = s.tx_queue[0] if s.tx_queue else None
        if s.phase is Phase.AWAIT_ACK and head is not None and head.dst == f.src and head.seq == f.seq:
            return _finish_head(s, now)
        return s, [TraceNote(f"unexpected ack seq={f.seq} from {f.src}")]
    if not f.is_data:
        return s, [TraceNote("frame with neither DATA nor ACK flag")]
    actions: list[MacAction] = []
    seen = s.dedup_window.get(f.src, ())
    if f.seq not in seen:
        window = dict(s.dedup_window)
        window[f.src] = (seen + (f.seq,))[-DEDUP_WINDOW:]
        s = replace(s, dedup_window=window)
        actions.append(DeliverUp(f.payload, f.src, f.seq))
    if not f.is_broadcast:
        ack = ack_for(f, me)
        airtime = s.config.ack_airtime_s
        # turnaround: the ACK leaves one processing guard after the frame ends
        at = duty_next_allowed(s.duty_ledger, airtime, now + s.config.processing_guard_s)
        s = replace(s, duty_ledger=s.duty_ledger.admit(at, airtime))
        actions.append(StartTx(ack, at, airtime))
    return s, actions


def mac_transition(s: MacState, event: MacEvent, now: float) -> tuple[MacState, list[MacAction]]:
    if isinstance(event, Enqueue):
        return _on_enqueue(s, event, now)
    if isinstance(event, TimerFired):
        return _on_timer(s, event, now)
    if isinstance(event, PhyTxDone):
        return _on_tx_done(s, event, now)
    if isinstance(event, PhyRx):
        return _on_rx(s, event, now)
    return s, [TraceNote(f"unknown event {event!r}")]
