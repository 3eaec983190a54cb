"""Regenerate the bundled rural and urban preset scenarios.

Run from the repository root: python3 scripts/make_presets.py
"""

from pathlib import Path

from uavlpwan.geometry import Position, Terrain
from uavlpwan.mobility import MissionPlan, Waypoint
from uavlpwan.phy import LoRaRadioParams, NbIotRadioParams, PathLossModel
from uavlpwan.scenario import (
    BoxRegion,
    DiscRegion,
    Models,
    Scenario,
    SimSettings,
    Tier2Bs,
    Traffic,
    UeDrone,
    validate_scenario,
    write_scenario,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "uavlpwan" / "presets"


def rural_terrain() -> Terrain:
    # 2 km x 1 km valley: flat floor, an 85 m ridge at x=1300..1400, then a hill
    cell = 20.0
    w, h = 100, 50
    elev = []
    for _row in range(h):
        for col in range(w):
            x = (col + 0.5) * cell
            if x < 1300:
                z = 0.0
            elif x < 1400:
                z = 85.0
            else:
                z = 80.0
            elev.append(z)
    return Terrain(width_cells=w, height_cells=h, cell_size_m=cell, elevation=tuple(elev))


def urban_terrain() -> Terrain:
    # 600 m square, flat, with a 20 m block ring (half-width 150..170 m) around the centre
    cell = 10.0
    n = 60
    elev = []
    for row in range(n):
        for col in range(n):
            dx = abs((col + 0.5) * cell - 300)
            dy = abs((row + 0.5) * cell - 300)
            elev.append(20.0 if 150 <= max(dx, dy) <= 170 else 0.0)
    return Terrain(width_cells=n, height_cells=n, cell_size_m=cell, elevation=tuple(elev))


def patrol(x0, y0, x1, y1, z, duration, speed=5.0) -> MissionPlan:
    leg = ((x1 - x0) ** 2 + (y1 - y0) ** 2) ** 0.5 / speed
    wps = []
    t = 0.0
    forward = True
    while t < duration:
        x, y = (x0, y0) if forward else (x1, y1)
        wps.append(Waypoint(x=x, y=y, z_agl=z, t=t))
        t += leg
        forward = not forward
    x, y = (x0, y0) if forward else (x1, y1)
    wps.append(Waypoint(x=x, y=y, z_agl=z, t=t))
    return MissionPlan(waypoints=tuple(wps))


def rural() -> Scenario:
    sf7 = LoRaRadioParams(spreading_factor=7, tx_power_dbm=14)
    return Scenario(
        name="rural",
        description=(
            "Valley with a ridge between the relay and an eNB on the far hill; the backhaul only "
            "clears the ridge from about 55 m up. Path-loss exponent n=3.642 is calibrated so SF7 "
            "at 60 m loses the carrier near 800 m horizontal. Backhaul exponent, NLoS excess, eNB "
            "power and ridge geometry are placeholder values."
        ),
        terrain=rural_terrain(),
        tier1_enb=NbIotRadioParams(
            enb_position=Position(x=1900, y=500, z_agl=30), enb_tx_power_dbm=35, carrier_hz=800e6
        ),
        tier2_bs=Tier2Bs(id=0, position=Position(x=500, y=500, z_agl=70), payload_mass_kg=4.0, lora=sf7),
        ue_drones=(
            UeDrone(id=1, mission=patrol(150, 300, 850, 300, 30, 600), lora=sf7, traffic=Traffic(period_s=10)),
            UeDrone(id=2, mission=patrol(200, 800, 800, 700, 40, 600), lora=sf7, traffic=Traffic(period_s=15)),
        ),
        ue_region=BoxRegion(x_min=100, x_max=900, y_min=100, y_max=900),
        models=Models(
            path_loss=PathLossModel(variant="log_distance", n=3.642, d0_m=1.0, nlos_excess_db=21.0),
            backhaul_path_loss=PathLossModel(variant="log_distance", n=2.9, d0_m=1.0, nlos_excess_db=45.0),
        ),
        sim=SimSettings(duration_s=600, seed=1),
    )


def urban() -> Scenario:
    sf9 = LoRaRadioParams(spreading_factor=9, tx_power_dbm=14)
    return Scenario(
        name="urban",
        description=(
            "Courtyard ringed by 20 m buildings; the eNB sits outside the ring so the backhaul is "
            "blocked at ground level and clear from 20 m up. Building height, eNB power and "
            "air-to-ground parameters are placeholder values."
        ),
        terrain=urban_terrain(),
        tier1_enb=NbIotRadioParams(
            enb_position=Position(x=590, y=300, z_agl=25), enb_tx_power_dbm=35, carrier_hz=800e6
        ),
        tier2_bs=Tier2Bs(id=0, position=Position(x=300, y=300, z_agl=30), payload_mass_kg=2.0, lora=sf9),
        ue_drones=(
            UeDrone(id=1, mission=patrol(200, 200, 400, 200, 15, 300), lora=sf9, traffic=Traffic(period_s=8)),
            UeDrone(id=2, mission=patrol(200, 400, 400, 400, 15, 300), lora=sf9, traffic=Traffic(period_s=8)),
            UeDrone(id=3, mission=patrol(300, 180, 300, 420, 25, 300), lora=sf9, traffic=Traffic(period_s=12)),
        ),
        ue_region=DiscRegion(shape="disc", center_x=300, center_y=300, radius_m=120),
        models=Models(
            path_loss=PathLossModel(variant="air_to_ground", shadowing_sigma_db=4.0),
            backhaul_path_loss=PathLossModel(variant="free_space", nlos_excess_db=25.0),
        ),
        sim=SimSettings(duration_s=300, seed=7),
    )


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for s in (rural(), urban()):
        problems = validate_scenario(s)
        if problems:
            raise SystemExit("\n".join(map(str, problems)))
        write_scenario(s, OUT / f"{s.name}.json")
        print(f"wrote {OUT / (s.name + '.json')}")


if __name__ == "__main__":
    main()
