"""Relay position/height selection and path-loss calibration against a measured range.

The coverage objective is the fraction of demand points whose uplink to the
relay demodulates with shadowing at its mean, so the search is deterministic.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .backhaul import CoverageClass, LinkInfeasible, coupling_loss, coverage_class_for
from .geometry import Position
from .mobility import MissionPlan, endurance, mission_feasible
from .phy import (
    PathLossModel,
    ZeroDistance,
    fspl_db,
    mean_path_loss_many,
    noise_floor,
    sensitivity_dbm,
    snr_threshold_db,
)
from .scenario import Scenario, _lattice, demand_points, region_bounds


class NoFeasiblePlacement(Exception):
    pass


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    x: float
    y: float
    h: float
    coverage: float
    cl_db: float
    feasible: bool


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    violations: tuple[str, ...]
    cl_db: float
    coverage_class: CoverageClass | None


@dataclass(frozen=True)
class PlacementResult:
    position: Position
    coverage_fraction: float
    backhaul_cl_db: float
    coverage_class: CoverageClass
    endurance_margin_min: float
    evaluated_candidates: int
    candidates: tuple[Candidate, ...] = ()


def _covered(bs: Position, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray, s: Scenario) -> np.ndarray:
    radio = s.reference_radio
    m = s.models
    try:
        loss = mean_path_loss_many(m.path_loss, bs, xs, ys, zs, s.terrain, radio.frequency_hz)
    except ZeroDistance:
        raise ValueError("relay candidate coincides with a demand point") from None
    rssi = radio.tx_power_dbm + radio.antenna_gain_dbi + s.tier2_bs.lora.antenna_gain_dbi - loss
    snr = rssi - noise_floor(radio.bandwidth_hz, m.noise_figure_db)
    sf = radio.spreading_factor
    return (rssi >= sensitivity_dbm(sf, radio.bandwidth_hz, m.sensitivity_dbm)) & (
        snr >= snr_threshold_db(sf, m.snr_threshold_db)
    )


def _demand_arrays(demand: Sequence[Position]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([p.x for p in demand], dtype=float),
        np.array([p.y for p in demand], dtype=float),
        np.array([p.z_agl for p in demand], dtype=float),
    )


def coverage_fraction(bs: Position, demand: Sequence[Position], s: Scenario) -> float:
    if not demand:
        raise ValueError("demand must be non-empty")
    return float(_covered(bs, *_demand_arrays(demand), s).mean())


def placement_feasible(bs: Position, s: Scenario) -> FeasibilityReport:
    """Backhaul coupling loss, altitude cap and hover endurance at ``bs``."""
    violations = []
    cl = coupling_loss(bs, s.tier1_enb, s.terrain, s.models.backhaul_path_loss)
    try:
        cc: CoverageClass | None = coverage_class_for(cl)
    except LinkInfeasible:
        cc = None
    if cl > s.tier1_enb.mcl_db or cc is None:
        violations.append(f"backhaul: coupling loss {cl:.2f} dB exceeds MCL {s.tier1_enb.mcl_db} dB")
    if bs.z_agl > s.placement.max_altitude_m:
        violations.append(f"altitude: {bs.z_agl} m above cap of {s.placement.max_altitude_m} m")
    plan = MissionPlan.hover(bs, s.bs_mission_duration_s)
    feas = mission_feasible(plan, s.tier2_bs.payload_mass_kg)
    if not feas.feasible:
        violations.append(
            f"endurance: {s.bs_mission_duration_s / 60:.1f} min mission exceeds "
            f"{endurance(s.tier2_bs.payload_mass_kg):.1f} min hover"
        )
    return FeasibilityReport(not violations, tuple(violations), cl, cc)


def optimize_placement(
    s: Scenario,
    grid_step_m: float,
    heights: Sequence[float],
    demand_resolution_m: float | None = None,
    margin_m: float = 0.0,
) -> PlacementResult:
    """Grid search over (x, y, h), then pattern-search refinement in (x, y) at the best height.

    Ties go to the lowest height, then lowest x, then lowest y.
    """
    if not grid_step_m > 0:
        raise ValueError("grid_step_m must be positive")
    if not heights:
        raise NoFeasiblePlacement("no candidate heights")
    demand = demand_points(s, demand_resolution_m or grid_step_m)
    dx, dy, dz = _demand_arrays(demand)
    total = len(demand)

    x0, x1, y0, y1 = region_bounds(s)
    x0, x1, y0, y1 = x0 - margin_m, x1 + margin_m, y0 - margin_m, y1 + margin_m
    if s.terrain is not None:
        x0, x1 = max(x0, 0.0), min(x1, s.terrain.width_m)
        y0, y1 = max(y0, 0.0), min(y1, s.terrain.height_m)

    evaluated: dict[tuple[float, float, float], tuple[int, FeasibilityReport]] = {}

    def evaluate(x: float, y: float, h: float) -> tuple[int, FeasibilityReport]:
        key = (x, y, h)
        if key not in evaluated:
            bs = Position(x=x, y=y, z_agl=h)
            try:
                count = int(_covered(bs, dx, dy, dz, s).sum())
            except ValueError:
                count = 0
            evaluated[key] = (count, placement_feasible(bs, s))
        return evaluated[key]

    best: tuple[int, float, float, float] | None = None  # (-count, h, x, y)
    for h in sorted(set(heights)):
        for y in _lattice(y0, y1, grid_step_m):
            for x in _lattice(x0, x1, grid_step_m):
                count, feas = evaluate(x, y, h)
                if feas.ok and (best is None or (-count, h, x, y) < best):
                    best = (-count, h, x, y)
    if best is None:
        raise NoFeasiblePlacement(f"all {len(evaluated)} candidates violate a constraint")

    neg_count, h, x, y = best
    count = -neg_count
    step = grid_step_m
    while step >= 1.0:
        moves = []
        for nx, ny in ((x - step, y), (x + step, y), (x, y - step), (x, y + step)):
            if not (x0 <= nx <= x1 and y0 <= ny <= y1):
                continue
            c, feas = evaluate(nx, ny, h)
            if feas.ok and c > count:
                moves.append((-c, nx, ny))
        if moves:
            neg, x, y = min(moves)
            count = -neg
        else:
            step /= 2

    position = Position(x=x, y=y, z_agl=h)
    feas = evaluated[(x, y, h)][1]
    assert feas.coverage_class is not None
    margin = endurance(s.tier2_bs.payload_mass_kg) - s.bs_mission_duration_s / 60.0
    candidates = tuple(
        Candidate(cx, cy, ch, c / total, f.cl_db, f.ok) for (cx, cy, ch), (c, f) in evaluated.items()
    )
    return PlacementResult(
        position=position,
        coverage_fraction=count / total,
        backhaul_cl_db=feas.cl_db,
        coverage_class=feas.coverage_class,
        endurance_margin_min=margin,
        evaluated_candidates=len(evaluated),
        candidates=candidates,
    )


def calibrate_path_loss(
    target_horizontal_m: float,
    bs_height_m: float,
    s: Scenario,
    bracket: tuple[float, float] = (1.5, 6.0),
    tol_db: float = 0.01,
) -> PathLossModel:
    """Fit the log-distance exponent so the link dies exactly at the target range.

    Solved by bisection on the exponent with shadowing off: RSSI at slant
    distance sqrt(target**2 + h**2) equals the receiver sensitivity.
    """
    model = s.models.path_loss
    if model.variant != "log_distance":
        raise CalibrationError(f"calibration needs a log_distance model, scenario has {model.variant}")
    if not target_horizontal_m > 0:
        raise CalibrationError("target distance must be positive")
    radio = s.reference_radio
    d = math.hypot(target_horizontal_m, bs_height_m)
    eirp = radio.tx_power_dbm + radio.antenna_gain_dbi + s.tier2_bs.lora.antenna_gain_dbi
    sens = sensitivity_dbm(radio.spreading_factor, radio.bandwidth_hz, s.models.sensitivity_dbm)
    ref = fspl_db(model.d0_m, radio.frequency_hz)

    def margin(n: float) -> float:
        return eirp - (ref + 10 * n * math.log10(d / model.d0_m)) - sens

    lo, hi = bracket
    if margin(lo) < 0 or margin(hi) > 0:
        raise CalibrationError(f"no exponent in [{lo}, {hi}] closes the link at {target_horizontal_m} m")
    for _ in range(200):
        mid = (lo + hi) / 2
        err = margin(mid)
        if abs(err) <= tol_db:
            break
        if err > 0:
            lo = mid
        else:
            hi = mid
    return model.model_copy(update={"n": mid, "shadowing_sigma_db": 0.0})
