import socket

import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavlpwan import backhaul as bh
from uavlpwan.geometry import Position
from uavlpwan.mac import SetTimer
from uavlpwan.phy import NbIotRadioParams, PathLossModel, fspl_db


@pytest.mark.parametrize(
    "cl,level,rate",
    [(140, "CE0", 15000), (144, "CE0", 15000), (144.01, "CE1", 1875), (150, "CE1", 1875), (160, "CE2", 468.75), (164, "CE2", 468.75)],
)
def test_coverage_classes(cl, level, rate):
    cc = bh.coverage_class_for(cl)
    assert cc.level == level
    assert bh.uplink_throughput(cc) == rate


@pytest.mark.parametrize("cl", [164.01, 165, 200])
def test_beyond_mcl_infeasible(cl):
    with pytest.raises(bh.LinkInfeasible):
        bh.coverage_class_for(cl)


def test_coupling_loss_subtracts_gains():
    enb = NbIotRadioParams(enb_position=Position(x=1000, y=0, z_agl=30), antenna_gain_dbi=2, enb_antenna_gain_dbi=15)
    bs = Position(x=0, y=0, z_agl=30)
    cl = bh.coupling_loss(bs, enb, None, PathLossModel())
    assert cl == pytest.approx(fspl_db(1000, 800e6) - 17)
    assert bh.downlink_rssi(bs, enb, None, PathLossModel()) == pytest.approx(35 - cl)


def test_datagram_layout():
    d = bh.make_datagram(b"abc", 0, 7, 9, -97.6, 12.3456)
    assert d.rssi_at_relay_dbm == -98 and d.timestamp_ms == 12346
    wire = d.encode()
    assert len(wire) == 17 == d.size
    assert wire[:14].hex() == "0000" "0007" "09" "9e" "000000000000" "303a"
    assert bh.decode_datagram(wire) == d


def test_datagram_rssi_clamped():
    assert bh.make_datagram(b"", 0, 1, 2, -300, 0).rssi_at_relay_dbm == -128
    assert bh.make_datagram(b"", 0, 1, 2, 500, 0).rssi_at_relay_dbm == 127


@given(
    relay=st.integers(0, 0xFFFF), src=st.integers(0, 0xFFFF), seq=st.integers(0, 255),
    rssi=st.integers(-128, 127), ts=st.integers(0, 2**64 - 1), payload=st.binary(max_size=64),
)
def test_datagram_round_trip(relay, src, seq, rssi, ts, payload):
    d = bh.RelayDatagram(relay, src, seq, rssi, ts, payload)
    assert bh.decode_datagram(d.encode()) == d


def test_datagram_rejects_bad_sizes():
    with pytest.raises(ValueError):
        bh.make_datagram(bytes(65), 0, 1, 2, 0, 0)
    with pytest.raises(ValueError):
        bh.decode_datagram(bytes(13))


def attached(cl=120.0):
    s = bh.UeState()
    s, _ = bh.ue_transition(s, bh.LinkEval(cl), 0.0)
    s, acts = bh.ue_transition(s, bh.PowerOn(), 0.0)
    assert s.phase is bh.UePhase.ATTACHING
    (timer,) = acts
    assert timer.at_time == 3.0
    s, _ = bh.ue_transition(s, bh.Timer(timer.token), 3.0)
    assert s.phase is bh.UePhase.IDLE
    return s


def test_uplink_flow():
    s = attached(150.0)
    d1 = bh.make_datagram(bytes(20), 0, 1, 0, -90, 4.0)
    d2 = bh.make_datagram(bytes(20), 0, 1, 1, -90, 4.0)
    s, acts = bh.ue_transition(s, bh.BhEnqueue(d1), 4.0)
    (up,) = acts
    assert s.phase is bh.UePhase.CONNECTED
    assert up.duration_s == pytest.approx(34 * 8 / 1875)
    s, acts = bh.ue_transition(s, bh.BhEnqueue(d2), 4.01)
    assert acts == [] and len(s.pending) == 2
    s, acts = bh.ue_transition(s, bh.TxDone(up.token), 4.0 + up.duration_s)
    assert isinstance(acts[0], bh.UplinkComplete) and acts[0].datagram == d1
    assert isinstance(acts[1], bh.StartUplink) and acts[1].datagram == d2
    s, acts = bh.ue_transition(s, bh.TxDone(acts[1].token), 5.0)
    assert [type(a) for a in acts] == [bh.UplinkComplete]
    assert s.phase is bh.UePhase.IDLE and not s.pending


def test_ip_overhead_option():
    s = bh.UeState(bh.BackhaulConfig(include_ip_overhead=True), coverage_class=bh.CE0)
    d = bh.make_datagram(bytes(20), 0, 1, 0, -90, 0)
    assert bh.tx_duration(s, d) == pytest.approx((34 + 28) * 8 / 15000)


def test_queue_overflow():
    s = bh.UeState(bh.BackhaulConfig(queue_capacity=1))
    d = bh.make_datagram(b"", 0, 1, 0, 0, 0)
    s, _ = bh.ue_transition(s, bh.BhEnqueue(d), 0.0)
    s, acts = bh.ue_transition(s, bh.BhEnqueue(d), 0.0)
    assert acts == [bh.DatagramDropped(d, "queue_overflow")]


def test_link_loss_detaches_and_reattaches():
    s = attached()
    d = bh.make_datagram(b"a", 0, 1, 0, 0, 0)
    s, (up,) = bh.ue_transition(s, bh.BhEnqueue(d), 5.0)
    s, acts = bh.ue_transition(s, bh.LinkEval(170.0), 6.0)
    assert s.phase is bh.UePhase.DETACHED
    assert isinstance(acts[0], SetTimer) and acts[0].at_time == 16.0
    # the aborted uplink never completes
    s, acts = bh.ue_transition(s, bh.TxDone(up.token), 6.5)
    assert acts == [] and s.pending == (d,)
    s, _ = bh.ue_transition(s, bh.LinkEval(130.0), 10.0)
    s, (timer,) = bh.ue_transition(s, bh.Timer(s.timer_token), 16.0)
    assert s.phase is bh.UePhase.ATTACHING
    s, (again,) = bh.ue_transition(s, bh.Timer(timer.token), timer.at_time)
    assert s.phase is bh.UePhase.CONNECTED and again.datagram == d


def test_attach_fails_without_coverage():
    s = bh.UeState()
    s, _ = bh.ue_transition(s, bh.LinkEval(170.0), 0.0)
    s, (timer,) = bh.ue_transition(s, bh.PowerOn(), 0.0)
    s, acts = bh.ue_transition(s, bh.Timer(timer.token), 3.0)
    assert s.phase is bh.UePhase.DETACHED and isinstance(acts[0], SetTimer)


def test_udp_sink_sends_real_packets():
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(2)
    sink = bh.UdpSink("127.0.0.1", rx.getsockname()[1])
    wire = bh.encapsulate(b"hi", 0, 1, 2, -80, 1.5)
    sink.send(wire)
    data, _ = rx.recvfrom(1024)
    sink.close()
    rx.close()
    assert data == wire
