import copy
import json

import pytest

from builders import disc_scenario, hover_ue, scenario
from uavlpwan.geometry import Terrain
from uavlpwan.scenario import (
    PRESETS,
    BoxRegion,
    EmptyRegion,
    Scenario,
    ScenarioError,
    ScenarioParseError,
    ScenarioValidationError,
    demand_points,
    load_preset,
    load_scenario,
    parse_scenario,
    scenario_to_json,
    validate_scenario,
    write_scenario,
)


def base_dict():
    s = scenario(
        ues=[hover_ue(1, 100, 0), hover_ue(2, 0, 100)],
        terrain=Terrain.flat(100, 100, 50.0),
        bs=(500, 500, 70),
        enb=(4000, 500, 30),
    )
    return json.loads(scenario_to_json(s))


def test_base_is_valid():
    assert validate_scenario(Scenario.model_validate(base_dict())) == []


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_validate(name):
    s = load_preset(name)
    assert s.name == name
    assert validate_scenario(s) == []
    assert s.ue_drones


def test_unknown_preset():
    with pytest.raises(ScenarioError):
        load_preset("lunar")


def test_round_trip(tmp_path):
    s = load_preset("urban")
    path = tmp_path / "u.json"
    write_scenario(s, path)
    assert load_scenario(path) == s
    assert scenario_to_json(load_scenario(path)) == scenario_to_json(s)


def test_json_syntax_error_has_line():
    with pytest.raises(ScenarioParseError, match=r"x.json:2:"):
        parse_scenario('{\n  "name": ,\n}', "x.json")


def test_unknown_field_rejected():
    d = base_dict()
    d["tier2_bs"]["colour"] = "red"
    with pytest.raises(ScenarioParseError, match=r"tier2_bs.colour: unknown field"):
        parse_scenario(json.dumps(d))


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "missing.json")


def _set(d, path, value):
    keys = path.split(".")
    for k in keys[:-1]:
        d = d[int(k)] if k.isdigit() else d[k]
    d[keys[-1]] = value


# each mutation breaks exactly one invariant
SINGLE = [
    ("tier2_bs.lora.spreading_factor", 6, "tier2_bs.lora.spreading_factor"),
    ("tier2_bs.lora.bandwidth_hz", 200000.0, "tier2_bs.lora.bandwidth_hz"),
    ("tier2_bs.lora.coding_rate", "4/9", "tier2_bs.lora.coding_rate"),
    ("tier2_bs.lora.tx_power_dbm", 20.0, "tier2_bs.lora.tx_power_dbm"),
    ("ue_drones.0.lora.tx_power_dbm", 15.0, "ue_drones[0].lora.tx_power_dbm"),
    ("tier2_bs.payload_mass_kg", 7.0, "tier2_bs.payload_mass_kg"),
    ("tier1_enb.mcl_db", 150.0, "tier1_enb.mcl_db"),
    ("tier2_bs.position.x", 6000.0, "tier2_bs.position"),
    ("tier2_bs.position.z_agl", -1.0, "tier2_bs.position.z_agl"),
    ("ue_drones.1.id", 1, "ue_drones[1].id"),
    ("ue_drones.0.id", 0, "ue_drones[0].id"),
    ("ue_drones.0.traffic.payload_bytes", 65, "ue_drones[0].traffic.payload_bytes"),
    ("ue_drones.0.traffic.period_s", 0.0, "ue_drones[0].traffic.period_s"),
    ("models.path_loss.n", 0.0, "models.path_loss.n"),
    ("models.inject_frame_loss", 1.0, "models.inject_frame_loss"),
    ("mac.max_retries", -1, "mac.max_retries"),
    ("sim.duration_s", 0.0, "sim.duration_s"),
    ("terrain.cell_size_m", 0.0, "terrain.cell_size_m"),
]


@pytest.mark.parametrize("path,value,where", SINGLE, ids=[s[0] for s in SINGLE])
def test_single_violation(path, value, where):
    d = base_dict()
    _set(d, path, value)
    s = Scenario.model_validate(d)
    violations = validate_scenario(s)
    assert [v.path for v in violations] == [where], violations
    with pytest.raises(ScenarioValidationError):
        parse_scenario(json.dumps(d))


def test_bad_waypoints_one_violation_per_mission():
    d = base_dict()
    wps = d["ue_drones"][0]["mission"]["waypoints"]
    wps.append({"x": 5000.0, "y": 0.0, "z_agl": 0.0, "t": wps[-1]["t"] + 1})
    violations = validate_scenario(Scenario.model_validate(d))
    paths = [v.path for v in violations]
    assert "ue_drones[0].mission.waypoints" in paths
    assert paths.count("ue_drones[0].mission.waypoints") == 1


def test_violations_accumulate():
    d = base_dict()
    _set(d, "tier2_bs.lora.spreading_factor", 13)
    _set(d, "sim.duration_s", -5.0)
    assert len(validate_scenario(Scenario.model_validate(d))) == 2


def test_demand_points_box_edges_included():
    s = scenario(region=BoxRegion(x_min=0, x_max=100, y_min=0, y_max=50))
    pts = demand_points(s, 25)
    xs = sorted({p.x for p in pts})
    ys = sorted({p.y for p in pts})
    assert xs == [0, 25, 50, 75, 100] and ys == [0, 25, 50]
    assert all(p.z_agl == 0 for p in pts)


def test_demand_points_disc():
    s = disc_scenario(radius=100)
    pts = demand_points(s, 25)
    assert all((p.x - 500) ** 2 + (p.y - 500) ** 2 <= 100**2 + 1e-6 for p in pts)
    assert any(p.x == 500 and p.y == 500 for p in pts)
    # symmetric about the centre
    assert sum(p.x - 500 for p in pts) == pytest.approx(0, abs=1e-6)


def test_demand_points_from_waypoints_and_empty():
    s = scenario(ues=[hover_ue(1, 10, 20), hover_ue(2, 30, 40)])
    pts = demand_points(s, 10)
    assert min(p.x for p in pts) == 10 and max(p.y for p in pts) == 40
    with pytest.raises(EmptyRegion):
        demand_points(scenario(), 10)


def test_reference_radio_and_mission_default():
    s = scenario(ues=[hover_ue(1, 0, 10, sf=9)], duration=50)
    assert s.reference_radio.spreading_factor == 9
    assert s.bs_mission_duration_s == 50
    assert copy.deepcopy(s) == s
