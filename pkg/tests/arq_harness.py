"""Two MAC state machines wired back to back with independent injected losses.

No radio model, no duty cycling: the point is to measure stop-and-wait ARQ
on its own.
"""

import heapq
import random
import struct
from dataclasses import dataclass, replace

from uavlpwan import mac
from uavlpwan.rng import substream

SENDER = 1
RECEIVER = 0


@dataclass
class ArqResult:
    messages: int
    acked: int
    exhausted: int
    delivered_unique: int
    duplicate_deliveries: int
    attempts: int

    @property
    def acked_ratio(self) -> float:
        return self.acked / self.messages

    @property
    def delivery_ratio(self) -> float:
        return self.delivered_unique / self.messages


def _no_duty(state: mac.MacState) -> mac.MacState:
    return replace(state, duty_ledger=mac.DutyCycleLedger(window_s=1.0, budget_s=1e12))


def run_arq(messages=10_000, frame_loss=0.3, ack_loss=0.3, max_retries=4, seed=0, payload_bytes=20):
    loss = random.Random(seed)
    nodes = {
        SENDER: _no_duty(mac.new_mac(mac.MacConfig(SENDER, max_retries=max_retries), substream(seed, SENDER, "backoff"))),
        RECEIVER: _no_duty(mac.new_mac(mac.MacConfig(RECEIVER, max_retries=max_retries), substream(seed, RECEIVER, "backoff"))),
    }
    heap = []
    counter = 0
    deliveries: dict[int, int] = {}
    exhausted = 0
    attempts = 0
    now = 0.0

    def push(t, target, event):
        nonlocal counter
        counter += 1
        heapq.heappush(heap, (t, counter, target, event))

    def apply(node_id, event):
        nonlocal exhausted, attempts
        nodes[node_id], actions = mac.mac_transition(nodes[node_id], event, now)
        other = RECEIVER if node_id == SENDER else SENDER
        for a in actions:
            if isinstance(a, mac.SetTimer):
                push(a.at_time, node_id, mac.TimerFired(a.token))
            elif isinstance(a, mac.StartTx):
                end = a.at_time + a.airtime
                if a.frame.is_data:
                    attempts += 1
                    push(end, node_id, mac.PhyTxDone(a.frame))
                p = ack_loss if a.frame.is_ack else frame_loss
                if loss.random() >= p:
                    push(end, other, mac.PhyRx(a.frame))
            elif isinstance(a, mac.DeliverUp):
                (k,) = struct.unpack(">I", a.payload[:4])
                deliveries[k] = deliveries.get(k, 0) + 1
            elif isinstance(a, mac.DropNotice):
                assert a.reason == "exhausted"
                exhausted += 1

    for k in range(messages):
        payload = struct.pack(">I", k) + bytes(payload_bytes - 4)
        apply(SENDER, mac.Enqueue(payload, RECEIVER))
        while heap:
            now, _, target, event = heapq.heappop(heap)
            apply(target, event)
        assert nodes[SENDER].phase is mac.Phase.IDLE

    return ArqResult(
        messages=messages,
        acked=messages - exhausted,
        exhausted=exhausted,
        delivered_unique=len(deliveries),
        duplicate_deliveries=sum(n - 1 for n in deliveries.values()),
        attempts=attempts,
    )
