from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arq_harness import run_arq
from uavlpwan import mac
from uavlpwan.frame import BROADCAST, FLAG_DATA, Frame, ack_for
from uavlpwan.phy import LoRaRadioParams
from uavlpwan.rng import RngStream, substream


def fresh(node_id=1, random_backoff=False, **kw):
    cfg = mac.MacConfig(node_id, random_backoff=random_backoff, **kw)
    return mac.new_mac(cfg, substream(0, node_id, "backoff"))


def step(s, event, now):
    return mac.mac_transition(s, event, now)


def only(actions, kind):
    found = [a for a in actions if isinstance(a, kind)]
    assert len(found) == 1, actions
    return found[0]


def send_one(s, now=0.0, dst=0, payload=b"hello"):
    s, acts = step(s, mac.Enqueue(payload, dst), now)
    timer = only(acts, mac.SetTimer)
    s, acts = step(s, mac.TimerFired(timer.token), timer.at_time)
    tx = only(acts, mac.StartTx)
    return s, tx


def test_happy_path():
    s = fresh()
    s, tx = send_one(s)
    assert s.phase is mac.Phase.TX
    assert tx.frame.seq == 0 and tx.frame.payload == b"hello"
    s, acts = step(s, mac.PhyTxDone(tx.frame), tx.at_time + tx.airtime)
    timeout = only(acts, mac.SetTimer)
    assert s.phase is mac.Phase.AWAIT_ACK
    assert timeout.at_time == pytest.approx(tx.at_time + tx.airtime + s.config.ack_timeout_s)
    s, acts = step(s, mac.PhyRx(ack_for(tx.frame, 0)), timeout.at_time - 0.01)
    assert s.phase is mac.Phase.IDLE and not s.tx_queue and acts == []
    # the old timeout is now stale
    s2, acts = step(s, mac.TimerFired(timeout.token), timeout.at_time)
    assert s2 == s and acts == []


def test_retries_then_exhausted():
    s = fresh(max_retries=2)
    s, tx = send_one(s)
    sends = 1
    t = tx.at_time
    while True:
        s, acts = step(s, mac.PhyTxDone(tx.frame), t + tx.airtime)
        timeout = only(acts, mac.SetTimer)
        s, acts = step(s, mac.TimerFired(timeout.token), timeout.at_time)
        drops = [a for a in acts if isinstance(a, mac.DropNotice)]
        if drops:
            assert drops[0].reason == "exhausted"
            break
        timer = only(acts, mac.SetTimer)
        s, acts = step(s, mac.TimerFired(timer.token), timer.at_time)
        tx = only(acts, mac.StartTx)
        t = tx.at_time
        sends += 1
    assert sends == 3  # first try plus two retries
    assert s.phase is mac.Phase.IDLE


def test_wrong_ack_ignored():
    s = fresh()
    s, tx = send_one(s)
    s, _ = step(s, mac.PhyTxDone(tx.frame), 1.0)
    bad = replace(ack_for(tx.frame, 0), seq=tx.frame.seq + 1)
    s2, acts = step(s, mac.PhyRx(bad), 1.01)
    assert s2.phase is mac.Phase.AWAIT_ACK
    assert isinstance(acts[0], mac.TraceNote)


def test_receiver_dedups_but_re_acks():
    rx = fresh(node_id=0)
    f = Frame(src=1, dst=0, seq=5, flags=FLAG_DATA, payload=b"x")
    rx, first = step(rx, mac.PhyRx(f), 1.0)
    rx, second = step(rx, mac.PhyRx(f), 2.0)
    assert len([a for a in first if isinstance(a, mac.DeliverUp)]) == 1
    assert not [a for a in second if isinstance(a, mac.DeliverUp)]
    assert only(second, mac.StartTx).frame.is_ack


def test_dedup_window_slides():
    rx = fresh(node_id=0)
    for seq in range(mac.DEDUP_WINDOW + 1):
        rx, _ = step(rx, mac.PhyRx(Frame(1, 0, seq, FLAG_DATA, b"")), float(seq))
    # seq 0 fell out of the window, so it is treated as new
    rx, acts = step(rx, mac.PhyRx(Frame(1, 0, 0, FLAG_DATA, b"")), 100.0)
    assert any(isinstance(a, mac.DeliverUp) for a in acts)


def test_broadcast_not_acked():
    rx = fresh(node_id=0)
    rx, acts = step(rx, mac.PhyRx(Frame(1, BROADCAST, 0, FLAG_DATA, b"b")), 0.0)
    assert [type(a) for a in acts] == [mac.DeliverUp]
    tx = fresh()
    tx, start = send_one(tx, dst=BROADCAST)
    tx, acts = step(tx, mac.PhyTxDone(start.frame), 1.0)
    assert tx.phase is mac.Phase.IDLE and acts == []


def test_other_destination_ignored():
    rx = fresh(node_id=0)
    rx2, acts = step(rx, mac.PhyRx(Frame(1, 9, 0, FLAG_DATA, b"")), 0.0)
    assert rx2 == rx and acts == []


def test_queue_full_and_oversize():
    s = fresh(queue_capacity=2)
    s, _ = step(s, mac.Enqueue(b"a", 0), 0.0)
    s, _ = step(s, mac.Enqueue(b"b", 0), 0.0)
    s, acts = step(s, mac.Enqueue(b"c", 0), 0.0)
    assert only(acts, mac.DropNotice).reason == "queue_full"
    s, acts = step(s, mac.Enqueue(bytes(65), 0), 0.0)
    assert only(acts, mac.DropNotice).reason == "oversize"
    assert len(s.tx_queue) == 2


def test_seq_wraps():
    s = replace(fresh(), next_seq=255)
    s, acts = step(s, mac.Enqueue(b"", 0), 0.0)
    assert s.tx_queue[0].seq == 255 and s.next_seq == 0


def test_transition_is_pure():
    s = fresh()
    before = repr(s)
    step(s, mac.Enqueue(b"x", 0), 0.0)
    assert repr(s) == before


@given(attempt=st.integers(0, 20), seed=st.integers(0, 2**32), pos=st.integers(0, 1000))
def test_backoff_bounds_and_determinism(attempt, seed, pos):
    stream = RngStream(seed, 1, "backoff", pos)
    slot, cap = 0.1, 3.2
    d = mac.backoff_delay(stream, attempt, slot, cap)
    assert 0 <= d <= min(2**attempt * slot, cap)
    assert d == mac.backoff_delay(stream, attempt, slot, cap)


def test_backoff_draws_advance_stream():
    s = fresh(random_backoff=True)
    s1, a1 = step(s, mac.Enqueue(b"x", 0), 0.0)
    assert s1.rng.position == s.rng.position + 1
    _, a2 = step(s, mac.Enqueue(b"x", 0), 0.0)
    assert a1 == a2


def first_admissible_scan(ledger, airtime, now, dt):
    """Brute-force oracle: walk forward on a fixed grid until the window has room."""
    t = now
    while True:
        used = sum(a for s, a in ledger.entries if t - s < ledger.window_s)
        if used + airtime <= ledger.budget_s + 1e-9:
            return t
        t += dt


@settings(max_examples=60, deadline=None)
@given(
    entries=st.lists(st.tuples(st.floats(0, 9.9), st.floats(0.01, 0.4)), max_size=8),
    airtime=st.floats(0.01, 0.5),
    now=st.floats(10, 12),
)
def test_duty_next_allowed_matches_scan(entries, airtime, now):
    ledger = mac.DutyCycleLedger(tuple(sorted((now - 10 + s, a) for s, a in entries)), window_s=10.0, budget_s=1.0)
    got = mac.duty_next_allowed(ledger, airtime, now)
    dt = 1e-3
    assert got >= now
    assert ledger.used(got) + airtime <= ledger.budget_s + 1e-9
    scanned = first_admissible_scan(ledger, airtime, now, dt)
    assert got <= scanned + 1e-9
    assert scanned <= got + dt + 1e-9


def test_duty_exceeded_and_defaults():
    ledger = mac.DutyCycleLedger()
    assert ledger.window_s == 3600 and ledger.budget_s == 36
    with pytest.raises(mac.DutyCycleExceeded):
        mac.duty_next_allowed(ledger, 37.0, 0.0)
    full = mac.DutyCycleLedger(((0.0, 36.0),))
    assert mac.duty_next_allowed(full, 0.1, 10.0) == pytest.approx(3600.0)


def test_mac_respects_duty_cycle():
    s = fresh()
    s = replace(s, duty_ledger=mac.DutyCycleLedger(((0.0, 35.99),)))
    s, acts = step(s, mac.Enqueue(b"x" * 20, 0), 1.0)
    assert only(acts, mac.SetTimer).at_time == pytest.approx(3600.0)


def test_slot_and_timeout_follow_radio():
    slow = mac.MacConfig(1, radio=LoRaRadioParams(spreading_factor=12))
    fast = mac.MacConfig(1)
    assert slow.slot_s > fast.slot_s
    assert slow.ack_timeout_s > fast.ack_timeout_s


def test_arq_lossless_harness():
    r = run_arq(messages=200, frame_loss=0.0, ack_loss=0.0)
    assert r.acked == 200 and r.delivered_unique == 200 and r.attempts == 200
    assert r.duplicate_deliveries == 0


def test_arq_small_lossy_run_has_no_duplicates():
    r = run_arq(messages=500, frame_loss=0.3, ack_loss=0.3, seed=3)
    assert r.duplicate_deliveries == 0
    assert r.delivered_unique >= r.acked
