import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavlpwan.geometry import Position
from uavlpwan.mobility import (
    MissionPlan,
    MissionTimeError,
    Waypoint,
    endurance,
    mission_feasible,
    mission_speed_violations,
    position_at,
)


def test_endurance_anchors():
    assert endurance(0) == 32
    assert endurance(6) == 16
    assert endurance(3) == pytest.approx(24)
    with pytest.raises(ValueError):
        endurance(6.5)
    with pytest.raises(ValueError):
        endurance(-1)


@given(st.floats(0, 6), st.floats(0, 6))
def test_endurance_monotone(a, b):
    if a <= b:
        assert endurance(a) >= endurance(b)


def test_hover_feasibility_flip_at_six_kg():
    p = Position(x=0, y=0, z_agl=60)
    assert mission_feasible(MissionPlan.hover(p, 15 * 60), 6).feasible
    late = mission_feasible(MissionPlan.hover(p, 17 * 60), 6)
    assert not late.feasible
    assert late.abort_time == pytest.approx(16 * 60)


def test_position_interpolates():
    m = MissionPlan(
        waypoints=(Waypoint(x=0, y=0, z_agl=10, t=0), Waypoint(x=100, y=0, z_agl=30, t=10))
    )
    mid = position_at(m, 5)
    assert (mid.x, mid.y, mid.z_agl) == pytest.approx((50, 0, 20))
    assert position_at(m, 10).x == 100
    with pytest.raises(MissionTimeError):
        position_at(m, 10.5)
    with pytest.raises(MissionTimeError):
        position_at(m, -1)


def test_speed_violations():
    fast = MissionPlan(waypoints=(Waypoint(x=0, y=0, t=0), Waypoint(x=100, y=0, t=1)))
    assert mission_speed_violations(fast)
    ok = MissionPlan(waypoints=(Waypoint(x=0, y=0, t=0), Waypoint(x=100, y=0, t=10)))
    assert mission_speed_violations(ok) == []
    backwards = MissionPlan(waypoints=(Waypoint(x=0, y=0, t=5), Waypoint(x=1, y=0, t=4)))
    assert mission_speed_violations(backwards)
