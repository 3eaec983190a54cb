"""Waypoint kinematics and the payload-dependent hover endurance of the relay drone."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .geometry import Position, StrictModel

DEFAULT_MAX_SPEED_MPS = 15.0


class Waypoint(StrictModel):
    x: float
    y: float
    z_agl: float = 0.0
    t: float

    @property
    def position(self) -> Position:
        return Position(x=self.x, y=self.y, z_agl=self.z_agl)


class MissionPlan(StrictModel):
    """Ordered waypoints; repeating a position at a later time is a loiter."""

    waypoints: tuple[Waypoint, ...]
    max_speed_mps: float = DEFAULT_MAX_SPEED_MPS

    @property
    def start(self) -> float:
        return self.waypoints[0].t

    @property
    def end(self) -> float:
        return self.waypoints[-1].t

    @property
    def duration_s(self) -> float:
        return self.end - self.start

    @classmethod
    def hover(cls, position: Position, duration_s: float, start: float = 0.0) -> MissionPlan:
        points = [Waypoint(x=position.x, y=position.y, z_agl=position.z_agl, t=start)]
        if duration_s > 0:
            points.append(Waypoint(x=position.x, y=position.y, z_agl=position.z_agl, t=start + duration_s))
        return cls(waypoints=tuple(points))


class MissionTimeError(ValueError):
    pass


def position_at(m: MissionPlan, t: float) -> Position:
    """Linear interpolation between the waypoints bracketing ``t``."""
    if not m.start <= t <= m.end:
        raise MissionTimeError(f"t={t} outside mission [{m.start}, {m.end}]")
    times = [w.t for w in m.waypoints]
    i = bisect.bisect_right(times, t) - 1
    a = m.waypoints[i]
    if i == len(m.waypoints) - 1 or t == a.t:
        return a.position
    b = m.waypoints[i + 1]
    f = (t - a.t) / (b.t - a.t)
    return Position(
        x=a.x + (b.x - a.x) * f,
        y=a.y + (b.y - a.y) * f,
        z_agl=a.z_agl + (b.z_agl - a.z_agl) * f,
    )


def position_held(m: MissionPlan, t: float) -> Position:
    """Like position_at but holds the first/last waypoint outside the mission window."""
    return position_at(m, min(max(t, m.start), m.end))


@dataclass(frozen=True)
class EnergyModel:
    """Hover endurance linear in payload between the empty and fully loaded anchors."""

    endurance_empty_min: float = 32.0
    endurance_full_min: float = 16.0
    max_payload_kg: float = 6.0

    def endurance(self, payload_kg: float) -> float:
        if not 0.0 <= payload_kg <= self.max_payload_kg:
            raise ValueError(f"payload {payload_kg} kg outside [0, {self.max_payload_kg}]")
        slope = (self.endurance_empty_min - self.endurance_full_min) / self.max_payload_kg
        return self.endurance_empty_min - slope * payload_kg


DEFAULT_ENERGY = EnergyModel()


def endurance(payload_kg: float, model: EnergyModel = DEFAULT_ENERGY) -> float:
    """Hover time in minutes for the relay drone carrying ``payload_kg``."""
    return model.endurance(payload_kg)


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    abort_time: float | None = None


def mission_feasible(m: MissionPlan, payload_kg: float, model: EnergyModel = DEFAULT_ENERGY) -> Feasibility:
    # flight is costed the same as hover
    budget_s = endurance(payload_kg, model) * 60.0
    if m.duration_s <= budget_s:
        return Feasibility(True)
    return Feasibility(False, m.start + budget_s)


def mission_speed_violations(m: MissionPlan) -> list[str]:
    out = []
    for a, b in zip(m.waypoints, m.waypoints[1:]):
        if b.t <= a.t:
            out.append(f"arrival time {b.t} not after {a.t}")
            continue
        dist = ((b.x - a.x) ** 2 + (b.y - a.y) ** 2 + (b.z_agl - a.z_agl) ** 2) ** 0.5
        if dist / (b.t - a.t) > m.max_speed_mps:
            out.append(f"leg {a.t}->{b.t} s needs {dist / (b.t - a.t):.2f} m/s > {m.max_speed_mps}")
    return out
