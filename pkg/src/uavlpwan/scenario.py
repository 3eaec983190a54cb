"""Declarative world description: terrain, nodes, radios, traffic, models and seed.

Scenarios are strict JSON documents. Unknown keys are rejected at load time and
every invariant is checked by :func:`validate_scenario`, which reports
violations as data rather than raising.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import pydantic
from pydantic import Field

from .geometry import Position, StrictModel, Terrain
from .mobility import MissionPlan, mission_speed_violations
from .phy import (
    BANDWIDTHS_HZ,
    CODING_RATES,
    EU868_MAX_TX_POWER_DBM,
    SENSITIVITY_DBM,
    SNR_THRESHOLD_DB,
    SPREADING_FACTORS,
    LoRaRadioParams,
    NbIotRadioParams,
    PathLossModel,
)

LTE_MCL_DB = 144.0
NBIOT_MCL_DB = LTE_MCL_DB + 20.0
MAX_PAYLOAD_MASS_KG = 6.0
MAX_APP_PAYLOAD = 64
BROADCAST_ID = 0xFFFF
PRESETS = ("rural", "urban")


class Traffic(StrictModel):
    period_s: float = 10.0
    payload_bytes: int = 20
    # None: phase drawn from the UE's seeded substream
    phase_s: float | None = None


class UeDrone(StrictModel):
    id: int
    mission: MissionPlan
    lora: LoRaRadioParams = LoRaRadioParams()
    traffic: Traffic = Traffic()


class Tier2Bs(StrictModel):
    id: int = 0
    position: Position
    payload_mass_kg: float = 0.0
    lora: LoRaRadioParams = LoRaRadioParams()
    # defaults to sim.duration_s
    mission_duration_s: float | None = None


class BoxRegion(StrictModel):
    shape: Literal["box"] = "box"
    x_min: float
    x_max: float
    y_min: float
    y_max: float


class DiscRegion(StrictModel):
    shape: Literal["disc"]
    center_x: float
    center_y: float
    radius_m: float


UeRegion = Annotated[Union[BoxRegion, DiscRegion], Field(discriminator="shape")]


class Models(StrictModel):
    path_loss: PathLossModel = PathLossModel()
    backhaul_path_loss: PathLossModel = PathLossModel()
    noise_figure_db: float = 6.0
    nbiot_noise_figure_db: float = 5.0
    capture_threshold_db: float = 6.0
    sensitivity_dbm: tuple[float, ...] = SENSITIVITY_DBM
    snr_threshold_db: tuple[float, ...] = SNR_THRESHOLD_DB
    inject_frame_loss: float = 0.0
    inject_ack_loss: float = 0.0


class MacSettings(StrictModel):
    max_retries: int = 4
    queue_capacity: int = 64
    random_backoff: bool = True
    max_backoff_slots: int = 32
    processing_guard_s: float = 0.05


class BackhaulSettings(StrictModel):
    attach_latency_s: float = 3.0
    base_rate_bps: float = 15000.0
    queue_capacity: int = 256
    reattach_backoff_s: float = 10.0
    link_eval_period_s: float = 10.0
    include_ip_overhead: bool = False


class PlacementSettings(StrictModel):
    max_altitude_m: float = 120.0


class SimSettings(StrictModel):
    duration_s: float
    seed: int = 0
    enforce_endurance: bool = True


class Scenario(StrictModel):
    name: str = ""
    description: str = ""
    terrain: Terrain | None = None
    tier1_enb: NbIotRadioParams
    tier2_bs: Tier2Bs
    ue_drones: tuple[UeDrone, ...] = ()
    ue_region: UeRegion | None = None
    models: Models = Models()
    mac: MacSettings = MacSettings()
    backhaul: BackhaulSettings = BackhaulSettings()
    placement: PlacementSettings = PlacementSettings()
    sim: SimSettings

    @property
    def bs_mission_duration_s(self) -> float:
        if self.tier2_bs.mission_duration_s is None:
            return self.sim.duration_s
        return self.tier2_bs.mission_duration_s

    @property
    def reference_radio(self) -> LoRaRadioParams:
        """Radio used for coverage planning: the first UE's, else the relay's own."""
        return self.ue_drones[0].lora if self.ue_drones else self.tier2_bs.lora


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    pass


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ScenarioValidationError(ScenarioError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class EmptyRegion(ValueError):
    pass


def parse_scenario(text: str, source: str = "<string>", validate: bool = True) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        s = Scenario.model_validate(data)
    except pydantic.ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            msg = "unknown field" if err["type"] == "extra_forbidden" else err["msg"]
            lines.append(f"{source}: {loc}: {msg}")
        raise ScenarioParseError("\n".join(lines)) from exc
    if validate:
        violations = validate_scenario(s)
        if violations:
            raise ScenarioValidationError(violations)
    return s


def load_scenario(path: str | Path, validate: bool = True) -> Scenario:
    """Read, parse and (by default) validate a scenario file.

    OSError from the read propagates unchanged so callers can tell I/O
    failures from bad content.
    """
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), str(path), validate)


def scenario_to_json(s: Scenario) -> str:
    return json.dumps(s.model_dump(mode="json"), indent=2) + "\n"


def write_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(scenario_to_json(s), encoding="utf-8")


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(str(resources.files("uavlpwan.presets").joinpath(f"{name}.json")))


def load_preset(name: str) -> Scenario:
    return load_scenario(preset_path(name))


def _check_radio(prefix: str, r: LoRaRadioParams) -> list[Violation]:
    out = []
    if r.spreading_factor not in SPREADING_FACTORS:
        out.append(Violation(f"{prefix}.spreading_factor", f"{r.spreading_factor} not in 7..12"))
    if r.bandwidth_hz not in BANDWIDTHS_HZ:
        out.append(Violation(f"{prefix}.bandwidth_hz", f"{r.bandwidth_hz} not in {BANDWIDTHS_HZ}"))
    if r.coding_rate not in CODING_RATES:
        out.append(Violation(f"{prefix}.coding_rate", f"{r.coding_rate!r} not in {CODING_RATES}"))
    if not r.tx_power_dbm <= EU868_MAX_TX_POWER_DBM:
        out.append(Violation(f"{prefix}.tx_power_dbm", f"{r.tx_power_dbm} dBm exceeds EU868 cap of 14 dBm"))
    if not r.frequency_hz > 0:
        out.append(Violation(f"{prefix}.frequency_hz", "must be positive"))
    if r.preamble_symbols < 6:
        out.append(Violation(f"{prefix}.preamble_symbols", "must be at least 6"))
    return out


def _check_model(prefix: str, m: PathLossModel) -> list[Violation]:
    out = []
    if not m.n > 0:
        out.append(Violation(f"{prefix}.n", "path-loss exponent must be positive"))
    if not m.d0_m > 0:
        out.append(Violation(f"{prefix}.d0_m", "reference distance must be positive"))
    if not m.eta_nlos_db >= m.eta_los_db:
        out.append(Violation(f"{prefix}.eta_nlos_db", "must be >= eta_los_db"))
    if not m.shadowing_sigma_db >= 0:
        out.append(Violation(f"{prefix}.shadowing_sigma_db", "must be >= 0"))
    if not m.nlos_excess_db >= 0:
        out.append(Violation(f"{prefix}.nlos_excess_db", "must be >= 0"))
    return out


def _check_position(path: str, p: Position, terrain: Terrain | None) -> list[Violation]:
    if not all(math.isfinite(v) for v in (p.x, p.y, p.z_agl)):
        return [Violation(path, "coordinates must be finite")]
    if p.z_agl < 0:
        return [Violation(f"{path}.z_agl", "must be >= 0")]
    if terrain is not None and not terrain.contains(p.x, p.y):
        return [Violation(path, f"({p.x}, {p.y}) outside terrain bounds")]
    return []


def _check_terrain(t: Terrain) -> list[Violation]:
    out = []
    if t.width_cells <= 0:
        out.append(Violation("terrain.width_cells", "must be positive"))
    if t.height_cells <= 0:
        out.append(Violation("terrain.height_cells", "must be positive"))
    if not t.cell_size_m > 0:
        out.append(Violation("terrain.cell_size_m", "must be positive"))
    if t.width_cells > 0 and t.height_cells > 0 and len(t.elevation) != t.width_cells * t.height_cells:
        out.append(
            Violation("terrain.elevation", f"length {len(t.elevation)} != {t.width_cells} x {t.height_cells}")
        )
    if not all(math.isfinite(e) for e in t.elevation):
        out.append(Violation("terrain.elevation", "elevations must be finite"))
    return out


def validate_scenario(s: Scenario) -> list[Violation]:
    """Every invariant violation in ``s``; an empty list means valid."""
    out: list[Violation] = []
    terrain = s.terrain
    if terrain is not None:
        terrain_problems = _check_terrain(terrain)
        out += terrain_problems
        if terrain_problems:
            terrain = None  # bounds checks would only cascade

    enb = s.tier1_enb
    if enb.mcl_db != NBIOT_MCL_DB:
        out.append(Violation("tier1_enb.mcl_db", f"must equal LTE MCL + 20 dB = {NBIOT_MCL_DB}"))
    if not enb.carrier_hz > 0:
        out.append(Violation("tier1_enb.carrier_hz", "must be positive"))
    out += _check_position("tier1_enb.enb_position", enb.enb_position, terrain)

    bs = s.tier2_bs
    out += _check_position("tier2_bs.position", bs.position, terrain)
    if not 0 <= bs.payload_mass_kg <= MAX_PAYLOAD_MASS_KG:
        out.append(Violation("tier2_bs.payload_mass_kg", f"{bs.payload_mass_kg} kg outside [0, 6]"))
    out += _check_radio("tier2_bs.lora", bs.lora)
    if bs.mission_duration_s is not None and bs.mission_duration_s < 0:
        out.append(Violation("tier2_bs.mission_duration_s", "must be >= 0"))
    if not 0 <= bs.id < BROADCAST_ID:
        out.append(Violation("tier2_bs.id", f"{bs.id} outside 0..0xFFFE"))

    seen: dict[int, int] = {bs.id: -1}
    reported: set[int] = set()
    for i, ue in enumerate(s.ue_drones):
        p = f"ue_drones[{i}]"
        if not 0 <= ue.id < BROADCAST_ID:
            out.append(Violation(f"{p}.id", f"{ue.id} outside 0..0xFFFE"))
        elif ue.id in seen and ue.id not in reported:
            out.append(Violation(f"{p}.id", f"duplicate node id {ue.id}"))
            reported.add(ue.id)
        seen.setdefault(ue.id, i)
        out += _check_radio(f"{p}.lora", ue.lora)
        if not ue.traffic.period_s > 0:
            out.append(Violation(f"{p}.traffic.period_s", "must be positive"))
        if not 0 <= ue.traffic.payload_bytes <= MAX_APP_PAYLOAD:
            out.append(Violation(f"{p}.traffic.payload_bytes", f"{ue.traffic.payload_bytes} outside 0..64"))
        if ue.traffic.phase_s is not None and ue.traffic.phase_s < 0:
            out.append(Violation(f"{p}.traffic.phase_s", "must be >= 0"))
        wps = ue.mission.waypoints
        if not wps:
            out.append(Violation(f"{p}.mission.waypoints", "at least one waypoint required"))
            continue
        problems = mission_speed_violations(ue.mission)
        if problems:
            out.append(Violation(f"{p}.mission.waypoints", "; ".join(problems)))
        for j, w in enumerate(wps):
            out += _check_position(f"{p}.mission.waypoints[{j}]", w.position, terrain)

    r = s.ue_region
    if isinstance(r, BoxRegion) and (r.x_max < r.x_min or r.y_max < r.y_min):
        out.append(Violation("ue_region", "max bound below min bound"))
    if isinstance(r, DiscRegion) and r.radius_m < 0:
        out.append(Violation("ue_region.radius_m", "must be >= 0"))

    m = s.models
    out += _check_model("models.path_loss", m.path_loss)
    out += _check_model("models.backhaul_path_loss", m.backhaul_path_loss)
    for name in ("sensitivity_dbm", "snr_threshold_db"):
        if len(getattr(m, name)) != 6:
            out.append(Violation(f"models.{name}", "needs one value per SF 7..12"))
    for name in ("inject_frame_loss", "inject_ack_loss"):
        if not 0 <= getattr(m, name) < 1:
            out.append(Violation(f"models.{name}", "probability must be in [0, 1)"))
    if m.capture_threshold_db < 0:
        out.append(Violation("models.capture_threshold_db", "must be >= 0"))

    if s.mac.max_retries < 0:
        out.append(Violation("mac.max_retries", "must be >= 0"))
    if s.mac.queue_capacity < 1:
        out.append(Violation("mac.queue_capacity", "must be >= 1"))
    if s.mac.max_backoff_slots < 1:
        out.append(Violation("mac.max_backoff_slots", "must be >= 1"))
    if s.backhaul.attach_latency_s < 0:
        out.append(Violation("backhaul.attach_latency_s", "must be >= 0"))
    if not s.backhaul.base_rate_bps > 0:
        out.append(Violation("backhaul.base_rate_bps", "must be positive"))
    if s.backhaul.queue_capacity < 1:
        out.append(Violation("backhaul.queue_capacity", "must be >= 1"))
    if not s.backhaul.link_eval_period_s > 0:
        out.append(Violation("backhaul.link_eval_period_s", "must be positive"))
    if not s.placement.max_altitude_m > 0:
        out.append(Violation("placement.max_altitude_m", "must be positive"))
    if not s.sim.duration_s > 0:
        out.append(Violation("sim.duration_s", "must be positive"))
    if not 0 <= s.sim.seed < 2**64:
        out.append(Violation("sim.seed", "must fit in 64 unsigned bits"))
    return out


def _lattice(lo: float, hi: float, step: float) -> list[float]:
    """Edge-inclusive points from lo to hi with spacing at most ``step``."""
    extent = hi - lo
    if extent <= 0:
        return [lo]
    n = math.ceil(extent / step - 1e-9)
    return [lo + extent * i / n for i in range(n + 1)]


def region_bounds(s: Scenario) -> tuple[float, float, float, float]:
    """(x_min, x_max, y_min, y_max) of the UE operating region."""
    r = s.ue_region
    if isinstance(r, BoxRegion):
        return r.x_min, r.x_max, r.y_min, r.y_max
    if isinstance(r, DiscRegion):
        return r.center_x - r.radius_m, r.center_x + r.radius_m, r.center_y - r.radius_m, r.center_y + r.radius_m
    wps = [w for ue in s.ue_drones for w in ue.mission.waypoints]
    if not wps:
        raise EmptyRegion("no ue_region declared and no UE waypoints to bound")
    xs = [w.x for w in wps]
    ys = [w.y for w in wps]
    return min(xs), max(xs), min(ys), max(ys)


def demand_points(s: Scenario, resolution_m: float) -> list[Position]:
    """Ground-level lattice over the UE operating region, edges included."""
    if not resolution_m > 0:
        raise ValueError("resolution_m must be positive")
    x0, x1, y0, y1 = region_bounds(s)
    pts = [Position(x=x, y=y, z_agl=0.0) for y in _lattice(y0, y1, resolution_m) for x in _lattice(x0, x1, resolution_m)]
    r = s.ue_region
    if isinstance(r, DiscRegion):
        pts = [p for p in pts if math.hypot(p.x - r.center_x, p.y - r.center_y) <= r.radius_m + 1e-9]
    if not pts:
        raise EmptyRegion("UE region contains no demand points")
    return pts
