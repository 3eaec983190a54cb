"""Deterministic discrete-event core.

One heap of ``(time, insertion_seq, ...)`` tuples drives every node: UE MACs,
the relay's MAC, and the relay's backhaul UE. All randomness comes from
substreams of the scenario seed, so the same scenario always yields the same
trace, byte for byte.
"""

from __future__ import annotations

import heapq
import json
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import backhaul as bh
from . import mac
from .frame import BROADCAST, Frame, FrameError, frame_decode, frame_encode
from .geometry import Position
from .mobility import MissionPlan, mission_feasible, position_held
from .phy import (
    LinkSample,
    LoRaRadioParams,
    Reception,
    ZeroDistance,
    collision_resolve,
    link_sample,
    lora_demod_ok,
    nbiot_metrics,
    propagation_delay,
)
from .rng import substream
from .scenario import Scenario, ScenarioValidationError, validate_scenario

HOUR_S = 3600.0
_RECEPTION_MEMORY_S = 30.0


@dataclass(frozen=True)
class TraceRecord:
    t: float
    kind: str
    node: int
    data: dict[str, Any] = field(default_factory=dict)

    def to_line(self) -> str:
        record = {"t": self.t, "kind": self.kind, "node": self.node}
        record.update(sorted(self.data.items()))
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> TraceRecord:
        raw = json.loads(line)
        return cls(raw.pop("t"), raw.pop("kind"), raw.pop("node"), raw)


Trace = list[TraceRecord]


def trace_text(trace: Trace) -> str:
    return "".join(r.to_line() + "\n" for r in trace)


def read_trace(text: str) -> Trace:
    return [TraceRecord.from_line(line) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class UeStats:
    sent: int
    delivered: int
    pdr: float | None  # None when nothing was sent
    p50_latency_s: float | None
    p95_latency_s: float | None
    max_latency_s: float | None


@dataclass(frozen=True)
class DutyStats:
    total_airtime_s: float
    max_hour_airtime_s: float
    utilization: float  # max trailing-hour airtime over one hour


@dataclass(frozen=True)
class SummaryStats:
    duration_s: float
    per_ue: dict[int, UeStats]
    p50_latency_s: float | None
    p95_latency_s: float | None
    max_latency_s: float | None
    rssi_series: dict[str, list[tuple[float, float]]]
    duty: dict[int, DutyStats]
    backhaul_max_queue: int
    collisions: int
    crc_failures: int
    demod_failures: int
    drops_by_reason: dict[str, int]


def _percentiles(values: list[float]) -> tuple[float | None, float | None, float | None]:
    if not values:
        return None, None, None
    arr = np.asarray(values)
    return float(np.percentile(arr, 50)), float(np.percentile(arr, 95)), float(arr.max())


def trailing_hour_airtime(starts: list[float], airtimes: list[float]) -> list[float]:
    """Airtime of transmissions starting in (t - 1 h, t], evaluated at each start t."""
    out = []
    lo = 0
    running = 0.0
    for i, t in enumerate(starts):
        running += airtimes[i]
        while starts[lo] + HOUR_S <= t:
            running -= airtimes[lo]
            lo += 1
        out.append(running)
    return out


def summarize(trace: Trace) -> SummaryStats:
    """Derive every statistic from the trace alone."""
    duration = 0.0
    ue_ids: list[int] = []
    enqueued: dict[str, tuple[int, float]] = {}
    delivered: dict[str, float] = {}
    rssi: dict[str, list[tuple[float, float]]] = defaultdict(list)
    tx_starts: dict[int, list[float]] = defaultdict(list)
    tx_air: dict[int, list[float]] = defaultdict(list)
    drops: dict[str, int] = defaultdict(int)
    counts = {"collision": 0, "crc_fail": 0, "demod_fail": 0}
    max_queue = 0
    for r in trace:
        k = r.kind
        if k == "sim_start":
            duration = r.data["duration_s"]
            ue_ids = list(r.data["ues"])
        elif k == "enqueue":
            enqueued[r.data["msg"]] = (r.node, r.t)
        elif k == "deliver":
            delivered.setdefault(r.data["msg"], r.t)
        elif k == "rx":
            rssi[f"{r.data['src']}->{r.node}"].append((r.t, r.data["rssi_dbm"]))
        elif k == "tx":
            tx_starts[r.node].append(r.t)
            tx_air[r.node].append(r.data["airtime_s"])
        elif k == "drop":
            drops[r.data["reason"]] += 1
        elif k == "relay":
            max_queue = max(max_queue, r.data["depth"])
        elif k in counts:
            counts[k] += 1

    latencies: dict[int, list[float]] = defaultdict(list)
    for msg, t in delivered.items():
        ue, t0 = enqueued[msg]
        latencies[ue].append(t - t0)
    sent: dict[int, int] = defaultdict(int)
    for ue, _ in enqueued.values():
        sent[ue] += 1

    per_ue = {}
    for ue in ue_ids:
        n_sent, n_del = sent[ue], len(latencies[ue])
        p50, p95, top = _percentiles(latencies[ue])
        per_ue[ue] = UeStats(n_sent, n_del, n_del / n_sent if n_sent else None, p50, p95, top)
    p50, p95, top = _percentiles([x for ue in ue_ids for x in latencies[ue]])

    duty = {}
    for node in sorted(tx_starts):
        window = trailing_hour_airtime(tx_starts[node], tx_air[node])
        peak = max(window)
        duty[node] = DutyStats(sum(tx_air[node]), peak, peak / HOUR_S)

    return SummaryStats(
        duration_s=duration,
        per_ue=per_ue,
        p50_latency_s=p50,
        p95_latency_s=p95,
        max_latency_s=top,
        rssi_series=dict(rssi),
        duty=duty,
        backhaul_max_queue=max_queue,
        collisions=counts["collision"],
        crc_failures=counts["crc_fail"],
        demod_failures=counts["demod_fail"],
        drops_by_reason=dict(drops),
    )


@dataclass
class _Radio:
    node_id: int
    radio: LoRaRadioParams
    mac: mac.MacState
    mission: MissionPlan | None = None
    fixed_position: Position | None = None
    alive: bool = True
    busy_until: float = -math.inf
    tx_intervals: list[tuple[float, float]] = field(default_factory=list)
    receptions: list[Reception] = field(default_factory=list)

    def position(self, t: float) -> Position:
        if self.mission is not None:
            return position_held(self.mission, t)
        assert self.fixed_position is not None
        return self.fixed_position


@dataclass
class _Tx:
    node: int
    frame: Frame
    wire: bytes
    airtime: float
    msg: str | None


class _Simulation:
    def __init__(self, s: Scenario, sink: Any = None):
        self.s = s
        self.sink = sink
        self.seed = s.sim.seed
        self.trace: Trace = []
        self.heap: list[tuple] = []
        self.counter = 0
        self.now = 0.0
        self.bs_id = s.tier2_bs.id
        m = s.mac
        self.nodes: dict[int, _Radio] = {}
        self.ues = {ue.id: ue for ue in s.ue_drones}
        for ue in s.ue_drones:
            cfg = mac.MacConfig(
                ue.id, ue.lora, m.max_retries, m.queue_capacity, m.random_backoff, m.max_backoff_slots,
                m.processing_guard_s,
            )
            self.nodes[ue.id] = _Radio(ue.id, ue.lora, mac.new_mac(cfg, substream(self.seed, ue.id, "backoff")),
                                       mission=ue.mission)
        bs = s.tier2_bs
        bs_cfg = mac.MacConfig(
            bs.id, bs.lora, m.max_retries, m.queue_capacity, m.random_backoff, m.max_backoff_slots,
            m.processing_guard_s,
        )
        self.nodes[bs.id] = _Radio(bs.id, bs.lora, mac.new_mac(bs_cfg, substream(self.seed, bs.id, "backoff")),
                                   fixed_position=bs.position)
        b = s.backhaul
        self.ue_state = bh.UeState(
            bh.BackhaulConfig(
                s.tier1_enb.mcl_db, b.base_rate_bps, b.attach_latency_s, b.queue_capacity,
                b.reattach_backoff_s, b.include_ip_overhead,
            )
        )
        self.txs: dict[int, _Tx] = {}
        self.tx_counter = 0
        self.shadow_rngs: dict[tuple[int, int], Any] = {}
        self.loss_rngs = {n: substream(self.seed, n, "injected_loss").generator() for n in self.nodes}
        self.msgs: dict[str, tuple[int, float]] = {}
        self.seq_msg: dict[tuple[int, int], str] = {}
        self.at_bs: set[str] = set()
        self.final: set[str] = set()
        self.datagram_msg: dict[tuple[int, int, int], str] = {}

    # bookkeeping

    def push(self, t: float, kind: str, *args: Any) -> None:
        self.counter += 1
        heapq.heappush(self.heap, (t, self.counter, kind, args))

    def record(self, kind: str, node: int, **data: Any) -> None:
        self.trace.append(TraceRecord(self.now, kind, node, data))

    # setup / teardown

    def start(self) -> None:
        s = self.s
        self.record("sim_start", self.bs_id, duration_s=s.sim.duration_s, seed=self.seed,
                    ues=[ue.id for ue in s.ue_drones], scenario=s.name)
        for ue in s.ue_drones:
            phase = ue.traffic.phase_s
            if phase is None:
                phase = substream(self.seed, ue.id, "phase").uniform() * ue.traffic.period_s
            self.push(phase, "traffic", ue.id, 0)
        self.push(0.0, "link_eval")
        self.push(0.0, "bh_power_on")
        if s.sim.enforce_endurance:
            plan = MissionPlan.hover(s.tier2_bs.position, s.bs_mission_duration_s)
            feas = mission_feasible(plan, s.tier2_bs.payload_mass_kg)
            if not feas.feasible:
                self.push(feas.abort_time, "bs_down")

    def finish(self) -> None:
        self.now = self.s.sim.duration_s
        bs_down = not self.nodes[self.bs_id].alive
        for msg, (ue, _) in self.msgs.items():
            if msg not in self.final:
                self.record("drop", ue, msg=msg, reason="bs_landed" if bs_down else "in_flight_at_end")
        self.record("sim_end", self.bs_id, events=self.counter)

    def run(self) -> Trace:
        self.start()
        duration = self.s.sim.duration_s
        while self.heap and self.heap[0][0] <= duration:
            t, _, kind, args = heapq.heappop(self.heap)
            self.now = t
            getattr(self, f"_ev_{kind}")(*args)
        self.finish()
        return self.trace

    # traffic

    def _payload(self, ue_id: int, k: int, size: int) -> bytes:
        body = substream(self.seed, ue_id, f"payload{k}").generator().randbytes(max(size - 2, 0))
        return (struct.pack(">H", k & 0xFFFF) + body)[:size]

    def _ev_traffic(self, ue_id: int, k: int) -> None:
        ue = self.ues[ue_id]
        msg = f"{ue_id}:{k}"
        payload = self._payload(ue_id, k, ue.traffic.payload_bytes)
        self.msgs[msg] = (ue_id, self.now)
        self.record("enqueue", ue_id, msg=msg, dst=self.bs_id, bytes=len(payload))
        node = self.nodes[ue_id]
        if len(node.mac.tx_queue) < node.mac.config.queue_capacity:
            # the MAC will stamp the frame with its current next_seq
            self.seq_msg[(ue_id, node.mac.next_seq)] = msg
        self._mac_event(node, mac.Enqueue(payload, self.bs_id), msg=msg)
        nxt = self.now + ue.traffic.period_s
        if nxt <= self.s.sim.duration_s:
            self.push(nxt, "traffic", ue_id, k + 1)

    # MAC plumbing

    def _mac_event(self, node: _Radio, event: mac.MacEvent, msg: str | None = None,
                   sample: LinkSample | None = None) -> None:
        old_phase = node.mac.phase
        node.mac, actions = mac.mac_transition(node.mac, event, self.now)
        if node.mac.phase is not old_phase:
            self.record("mac_state", node.node_id, phase=node.mac.phase.value)
        for a in actions:
            if isinstance(a, mac.StartTx):
                self.tx_counter += 1
                m = self.seq_msg.get((node.node_id, a.frame.seq)) if a.frame.is_data else None
                self.txs[self.tx_counter] = _Tx(node.node_id, a.frame, frame_encode(a.frame), a.airtime, m)
                self.push(a.at_time, "tx_start", self.tx_counter)
            elif isinstance(a, mac.SetTimer):
                self.push(a.at_time, "mac_timer", node.node_id, a.token)
            elif isinstance(a, mac.DeliverUp):
                self._deliver_up(node, a, sample)
            elif isinstance(a, mac.DropNotice):
                self._mac_drop(node, a, msg)
            elif isinstance(a, mac.TraceNote):
                self.record("note", node.node_id, text=a.message)

    def _mac_drop(self, node: _Radio, a: mac.DropNotice, msg: str | None) -> None:
        if a.reason != "exhausted":
            msg = msg or self.seq_msg.get((node.node_id, a.frame.seq))
        else:
            msg = self.seq_msg.get((node.node_id, a.frame.seq))
        if msg is None:
            self.record("drop", node.node_id, reason=a.reason, seq=a.frame.seq)
            return
        if msg in self.at_bs:
            # the relay has it even though every ACK was lost
            self.record("unacked", node.node_id, msg=msg, seq=a.frame.seq)
            return
        self.final.add(msg)
        self.record("drop", node.node_id, msg=msg, reason=a.reason, seq=a.frame.seq)

    def _ev_mac_timer(self, node_id: int, token: int) -> None:
        self._mac_event(self.nodes[node_id], mac.TimerFired(token))

    # channel

    def _sample(self, tx: _Radio, rx: _Radio) -> LinkSample:
        key = (tx.node_id, rx.node_id)
        rng = self.shadow_rngs.get(key)
        if rng is None:
            rng = self.shadow_rngs[key] = substream(self.seed, f"{key[0]}->{key[1]}", "shadowing").generator()
        a, b = tx.position(self.now), rx.position(self.now)
        m = self.s.models
        try:
            return link_sample(a, b, tx.radio, rx.radio.antenna_gain_dbi, m.path_loss, self.s.terrain,
                               m.noise_figure_db, rng)
        except ZeroDistance:
            b = b.with_height(b.z_agl + 1.0)
            return link_sample(a, b, tx.radio, rx.radio.antenna_gain_dbi, m.path_loss, self.s.terrain,
                               m.noise_figure_db, rng)

    def _ev_tx_start(self, tx_id: int) -> None:
        tx = self.txs[tx_id]
        node = self.nodes[tx.node]
        if not node.alive:
            return
        if node.busy_until > self.now:
            # single radio: queue behind the transmission in progress
            self.push(node.busy_until, "tx_start", tx_id)
            return
        end = self.now + tx.airtime
        node.busy_until = end
        node.tx_intervals = [iv for iv in node.tx_intervals if iv[1] > self.now - _RECEPTION_MEMORY_S]
        node.tx_intervals.append((self.now, end))
        f = tx.frame
        self.record("tx", node.node_id, airtime_s=tx.airtime, dst=f.dst, seq=f.seq,
                    type="ack" if f.is_ack else "data", msg=tx.msg)
        for rx in self.nodes.values():
            if rx is node or not rx.alive:
                continue
            sample = self._sample(node, rx)
            delay = propagation_delay(sample.distance_m)
            rec = Reception(tx_id, sample.rssi_dbm, node.radio.spreading_factor, self.now + delay,
                            end + delay, node.radio.frequency_hz)
            rx.receptions = [r for r in rx.receptions if r.end > self.now - _RECEPTION_MEMORY_S]
            rx.receptions.append(rec)
            self.push(rec.end, "rx_end", rx.node_id, tx, rec, sample)
        self.push(end, "tx_end", tx_id)

    def _ev_tx_end(self, tx_id: int) -> None:
        tx = self.txs.pop(tx_id)
        node = self.nodes[tx.node]
        if node.alive:
            self._mac_event(node, mac.PhyTxDone(tx.frame))

    def _ev_rx_end(self, rx_id: int, tx: _Tx, rec: Reception, sample: LinkSample) -> None:
        rx = self.nodes[rx_id]
        f = tx.frame
        if not rx.alive or f.dst not in (rx_id, BROADCAST):
            return
        src_radio = self.nodes[tx.node].radio
        mine = rx.radio
        if (src_radio.spreading_factor, src_radio.bandwidth_hz, src_radio.frequency_hz) != (
            mine.spreading_factor, mine.bandwidth_hz, mine.frequency_hz
        ):
            return
        info = dict(src=tx.node, seq=f.seq, type="ack" if f.is_ack else "data", msg=tx.msg)
        m = self.s.models
        if not lora_demod_ok(sample, rec.sf, mine.bandwidth_hz, m.sensitivity_dbm, m.snr_threshold_db):
            self.record("demod_fail", rx_id, rssi_dbm=sample.rssi_dbm, snr_db=sample.snr_db, **info)
            return
        overlapping = [r for r in rx.receptions if r.start < rec.end and rec.start < r.end]
        survived = collision_resolve(overlapping, m.capture_threshold_db)[overlapping.index(rec)]
        if not survived:
            self.record("collision", rx_id, rssi_dbm=sample.rssi_dbm, **info)
            garbled = bytearray(tx.wire)
            garbled[len(garbled) // 2] ^= 0x10
            try:
                frame_decode(bytes(garbled))
            except FrameError as exc:
                self.record("crc_fail", rx_id, error=type(exc).__name__, **info)
            return
        if any(s < rec.end and rec.start < e for s, e in rx.tx_intervals):
            self.record("half_duplex", rx_id, **info)
            return
        p_loss = m.inject_ack_loss if f.is_ack else m.inject_frame_loss
        if p_loss > 0 and self.loss_rngs[rx_id].random() < p_loss:
            self.record("lost", rx_id, reason="injected_loss", **info)
            return
        frame = frame_decode(tx.wire)
        self.record("rx", rx_id, rssi_dbm=sample.rssi_dbm, snr_db=sample.snr_db, **info)
        self._mac_event(rx, mac.PhyRx(frame), msg=tx.msg, sample=sample)

    # relay and backhaul

    def _deliver_up(self, node: _Radio, a: mac.DeliverUp, sample: LinkSample | None) -> None:
        msg = self.seq_msg.get((a.src, a.seq))
        self.record("deliver_up", node.node_id, src=a.src, seq=a.seq, msg=msg)
        if node.node_id != self.bs_id:
            return
        rssi = sample.rssi_dbm if sample is not None else 0.0
        d = bh.make_datagram(a.payload, self.bs_id, a.src, a.seq, rssi, self.now)
        if msg is not None:
            self.at_bs.add(msg)
            self.datagram_msg[(d.origin_src, d.origin_seq, d.timestamp_ms)] = msg
        self._ue_event(bh.BhEnqueue(d))
        self.record("relay", self.bs_id, msg=msg, depth=len(self.ue_state.pending))

    def _ue_event(self, event: bh.UeEvent) -> None:
        if not self.nodes[self.bs_id].alive:
            return
        old = self.ue_state.phase
        self.ue_state, actions = bh.ue_transition(self.ue_state, event, self.now)
        if self.ue_state.phase is not old:
            self.record("bh_state", self.bs_id, phase=self.ue_state.phase.value)
        for a in actions:
            if isinstance(a, mac.SetTimer):
                self.push(a.at_time, "bh_timer", a.token)
            elif isinstance(a, bh.StartUplink):
                self.record("bh_tx", self.bs_id, msg=self._dg_msg(a.datagram), duration_s=a.duration_s,
                            bytes=a.datagram.size)
                self.push(self.now + a.duration_s, "bh_tx_done", a.token)
            elif isinstance(a, bh.UplinkComplete):
                msg = self._dg_msg(a.datagram)
                if msg is not None:
                    self.final.add(msg)
                self.record("deliver", self.bs_id, msg=msg, src=a.datagram.origin_src)
                if self.sink is not None:
                    self.sink.send(a.datagram.encode())
            elif isinstance(a, bh.DatagramDropped):
                msg = self._dg_msg(a.datagram)
                if msg is not None:
                    self.final.add(msg)
                self.record("drop", self.bs_id, msg=msg, reason=a.reason)
            elif isinstance(a, mac.TraceNote):
                self.record("note", self.bs_id, text=a.message)

    def _dg_msg(self, d: bh.RelayDatagram) -> str | None:
        return self.datagram_msg.get((d.origin_src, d.origin_seq, d.timestamp_ms))

    def _ev_bh_power_on(self) -> None:
        self._ue_event(bh.PowerOn())

    def _ev_bh_timer(self, token: int) -> None:
        self._ue_event(bh.Timer(token))

    def _ev_bh_tx_done(self, token: int) -> None:
        self._ue_event(bh.TxDone(token))

    def _ev_link_eval(self) -> None:
        s = self.s
        bs = self.nodes[self.bs_id]
        if not bs.alive:
            return
        cl = bh.coupling_loss(bs.position(self.now), s.tier1_enb, s.terrain, s.models.backhaul_path_loss)
        metrics = nbiot_metrics(s.tier1_enb.enb_tx_power_dbm - cl, s.models.nbiot_noise_figure_db)
        self.record("link_eval", self.bs_id, cl_db=cl, rsrp_dbm=metrics.rsrp_dbm)
        self._ue_event(bh.LinkEval(cl, metrics))
        self.push(self.now + s.backhaul.link_eval_period_s, "link_eval")

    def _ev_bs_down(self) -> None:
        self.nodes[self.bs_id].alive = False
        self.record("bs_down", self.bs_id, reason="endurance")


def run(s: Scenario, sink: Any = None) -> tuple[Trace, SummaryStats]:
    """Simulate ``s`` over [0, duration]; identical scenarios give identical traces."""
    violations = validate_scenario(s)
    if violations:
        raise ScenarioValidationError(violations)
    trace = _Simulation(s, sink).run()
    return trace, summarize(trace)
