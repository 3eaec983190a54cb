"""Command-line front end.

Exit codes: 0 success, 1 invalid input or scenario, 2 I/O failure,
3 no feasible relay placement.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

from . import engine
from .backhaul import UdpSink, downlink_rssi
from .geometry import Position
from .phy import link_sample, lora_demod_ok, nbiot_metrics
from .placement import CalibrationError, NoFeasiblePlacement, calibrate_path_loss, optimize_placement
from .scenario import PRESETS, Scenario, ScenarioError, load_preset, load_scenario, write_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_NO_PLACEMENT = 3
OUT_ENV = "UAVLPWAN_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which would collide with the I/O code
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def parse_sweep(text: str) -> list[float]:
    """``start:stop:step`` (stop inclusive) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"sweep {text!r} must be start:stop:step")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise UsageError(f"sweep {text!r} has a non-numeric bound") from None
        if not step > 0 or stop < start:
            raise UsageError(f"sweep {text!r} needs step > 0 and stop >= start")
        n = math.floor((stop - start) / step + 1e-9)
        return [round(start + i * step, 9) for i in range(n + 1)]
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"sweep {text!r} is not a comma list of numbers") from None
    if not values:
        raise UsageError("empty sweep")
    return values


def fmt(v) -> str:
    """Locale-independent CSV cell."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v == int(v) and abs(v) < 1e15:
            return f"{v:.1f}"
        return f"{v:.6f}"
    return str(v)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Stage every file in a temp dir, then move them into place; nothing partial is left."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, text in files.items():
            with open(stage / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _load(ref: str) -> Scenario:
    if not os.path.exists(ref) and ref in PRESETS:
        return load_preset(ref)
    return load_scenario(ref)


def _map(fn: Callable, items: list, parallel: bool) -> list:
    if parallel and len(items) > 1:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(fn, items))  # map keeps input order
    return [fn(x) for x in items]


# run


def summary_csv(stats: engine.SummaryStats) -> str:
    rows = [
        (ue, u.sent, u.delivered, u.pdr, u.p50_latency_s, u.p95_latency_s)
        for ue, u in sorted(stats.per_ue.items())
    ]
    return csv_text(("id", "sent", "delivered", "pdr", "p50_latency_s", "p95_latency_s"), rows)


def cmd_run(args) -> int:
    s = _load(args.scenario)
    if args.seed is not None:
        s = s.model_copy(update={"sim": s.sim.model_copy(update={"seed": args.seed})})
    sink = None
    if args.live_sink:
        host, _, port = args.live_sink.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--live-sink {args.live_sink!r} must be host:port")
        sink = UdpSink(host, int(port))
    try:
        trace, stats = engine.run(s, sink)
    finally:
        if sink is not None:
            sink.close()
    write_outputs(Path(args.out), {"summary.csv": summary_csv(stats), "trace.log": engine.trace_text(trace)})
    for ue, u in sorted(stats.per_ue.items()):
        pdr = "n/a" if u.pdr is None else f"{u.pdr:.3f}"
        print(f"ue {ue}: sent {u.sent} delivered {u.delivered} pdr {pdr}")
    return EXIT_OK


# experiments


def _vertical_point(args: tuple[Scenario, float, bool]) -> tuple:
    s, h, with_terrain = args
    terrain = s.terrain if with_terrain else None
    bs = s.tier2_bs
    ue = Position(x=bs.position.x, y=bs.position.y, z_agl=0.0)
    # coincident antennas are undefined; floor the separation at 1 m
    relay = ue.with_height(max(h, 1.0))
    radio = s.reference_radio
    m = s.models
    sample = link_sample(ue, relay, radio, bs.lora.antenna_gain_dbi, m.path_loss, terrain, m.noise_figure_db)
    ok = lora_demod_ok(sample, radio.spreading_factor, radio.bandwidth_hz, m.sensitivity_dbm, m.snr_threshold_db)
    return (h, sample.rssi_dbm, sample.snr_db, ok)


def _horizontal_point(args: tuple[Scenario, float, float, bool]) -> tuple:
    s, h, d, with_terrain = args
    terrain = s.terrain if with_terrain else None
    bs = s.tier2_bs
    relay = Position(x=bs.position.x, y=bs.position.y, z_agl=h)
    ue = Position(x=bs.position.x + d, y=bs.position.y, z_agl=0.0)
    if h == 0 and d == 0:
        ue = ue.with_height(1.0)
    radio = s.reference_radio
    m = s.models
    sample = link_sample(ue, relay, radio, bs.lora.antenna_gain_dbi, m.path_loss, terrain, m.noise_figure_db)
    ok = lora_demod_ok(sample, radio.spreading_factor, radio.bandwidth_hz, m.sensitivity_dbm, m.snr_threshold_db)
    return (d, sample.rssi_dbm, sample.snr_db, ok)


def _backhaul_point(args: tuple[Scenario, float]) -> tuple:
    s, h = args
    relay = s.tier2_bs.position.with_height(h)
    rssi = downlink_rssi(relay, s.tier1_enb, s.terrain, s.models.backhaul_path_loss)
    m = nbiot_metrics(rssi, s.models.nbiot_noise_figure_db)
    return (h, m.rsrp_dbm, m.rsrq_db, m.rssi_dbm, m.snr_db)


def _with_sf(s: Scenario, sf: int | None) -> Scenario:
    if sf is None:
        return s
    ues = tuple(u.model_copy(update={"lora": u.lora.model_copy(update={"spreading_factor": sf})}) for u in s.ue_drones)
    bs = s.tier2_bs.model_copy(update={"lora": s.tier2_bs.lora.model_copy(update={"spreading_factor": sf})})
    return s.model_copy(update={"ue_drones": ues, "tier2_bs": bs})


def cmd_exp1(args) -> int:
    s = _with_sf(_load(args.scenario), args.sf)
    heights = parse_sweep(args.heights)
    if min(heights) < 0:
        raise UsageError("heights must be >= 0")
    rows = _map(_vertical_point, [(s, h, args.with_terrain) for h in heights], args.parallel)
    write_outputs(Path(args.out), {"exp1.csv": csv_text(("height_m", "rssi_dbm", "snr_db", "demod_ok"), rows)})
    print(f"{len(rows)} heights written to {Path(args.out) / 'exp1.csv'}")
    return EXIT_OK


def first_loss(rows: Sequence[tuple]) -> float | None:
    for row in rows:
        if not row[3]:
            return row[0]
    return None


def cmd_exp2(args) -> int:
    s = _with_sf(_load(args.scenario), args.sf)
    distances = parse_sweep(args.distances)
    if min(distances) < 0:
        raise UsageError("distances must be >= 0")
    rows = _map(
        _horizontal_point, [(s, args.bs_height, d, args.with_terrain) for d in distances], args.parallel
    )
    write_outputs(Path(args.out), {"exp2.csv": csv_text(("distance_m", "rssi_dbm", "snr_db", "demod_ok"), rows)})
    lost = first_loss(rows)
    if lost is None:
        print(f"carrier held over the whole sweep (to {distances[-1]:g} m)")
    else:
        print(f"carrier lost at {lost:g} m")
    return EXIT_OK


def cmd_exp3(args) -> int:
    s = _load(args.scenario)
    heights = parse_sweep(args.heights)
    if min(heights) < 0:
        raise UsageError("heights must be >= 0")
    rows = _map(_backhaul_point, [(s, h) for h in heights], args.parallel)
    header = ("height_m", "rsrp_dbm", "rsrq_db", "rssi_dbm", "snr_db")
    write_outputs(Path(args.out), {"exp3.csv": csv_text(header, rows)})
    print(f"{len(rows)} heights written to {Path(args.out) / 'exp3.csv'}")
    return EXIT_OK


# placement and calibration


def cmd_place(args) -> int:
    s = _load(args.scenario)
    heights = parse_sweep(args.heights)
    if not args.grid > 0:
        raise UsageError("--grid must be positive")
    r = optimize_placement(s, args.grid, heights, args.demand_resolution, args.margin)
    report = {
        "position": r.position.model_dump(),
        "coverage_fraction": r.coverage_fraction,
        "backhaul_cl_db": r.backhaul_cl_db,
        "coverage_class": asdict(r.coverage_class),
        "endurance_margin_min": r.endurance_margin_min,
        "evaluated_candidates": r.evaluated_candidates,
    }
    rows = [(c.x, c.y, c.h, c.coverage, c.cl_db, c.feasible) for c in r.candidates]
    write_outputs(
        Path(args.out),
        {
            "placement.json": json.dumps(report, indent=2, sort_keys=True) + "\n",
            "candidates.csv": csv_text(("x", "y", "h", "coverage", "cl_db", "feasible"), rows),
        },
    )
    p = r.position
    print(
        f"relay at x={p.x:g} y={p.y:g} h={p.z_agl:g} m: coverage {r.coverage_fraction:.3f}, "
        f"backhaul {r.backhaul_cl_db:.2f} dB ({r.coverage_class.level})"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    s = _with_sf(_load(args.scenario), args.sf)
    model = calibrate_path_loss(args.target_m, args.height, s)
    print(f"n = {model.n:.4f}")
    print(model.model_dump_json())
    if args.write_scenario:
        patched = s.model_copy(update={"models": s.models.model_copy(update={"path_loss": model})})
        write_scenario(patched, args.write_scenario)
        print(f"calibrated scenario written to {args.write_scenario}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    default_out = os.environ.get(OUT_ENV, "out")
    p = _Parser(prog="uavlpwan", description="Two-tier UAV LoRa/NB-IoT relay simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp: argparse.ArgumentParser, out: bool = True) -> None:
        sp.add_argument("--scenario", required=True, help=f"scenario JSON path or preset name {PRESETS}")
        sp.add_argument("--seed", type=int, default=None, help="override sim.seed")
        sp.add_argument("--parallel", action="store_true", help="evaluate sweep points in worker processes")
        if out:
            sp.add_argument("--out", default=default_out, help=f"output directory (default ${OUT_ENV} or ./out)")

    sp = sub.add_parser("run", help="simulate a scenario")
    common(sp)
    sp.add_argument("--live-sink", metavar="HOST:PORT", help="also send delivered datagrams over UDP")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("exp1", help="RSSI vs relay height above a ground UE")
    common(sp)
    sp.add_argument("--heights", default="0:100:5", help="relay heights, start:stop:step or a,b,c")
    sp.add_argument("--sf", type=int, choices=range(7, 13), help="override every spreading factor")
    sp.add_argument("--with-terrain", action="store_true", help="include scenario terrain (default open field)")
    sp.set_defaults(fn=cmd_exp1)

    sp = sub.add_parser("exp2", help="RSSI vs horizontal distance at fixed relay height")
    common(sp)
    sp.add_argument("--bs-height", type=float, default=60.0, help="relay height in m")
    sp.add_argument("--distances", default="0:1000:10", help="horizontal UE offsets in m")
    sp.add_argument("--sf", type=int, choices=range(7, 13), help="override every spreading factor")
    sp.add_argument("--with-terrain", action="store_true", help="include scenario terrain (default open field)")
    sp.set_defaults(fn=cmd_exp2)

    sp = sub.add_parser("exp3", help="NB-IoT backhaul metrics vs relay height")
    common(sp)
    sp.add_argument("--heights", default="0,10,20,30", help="relay heights in m")
    sp.set_defaults(fn=cmd_exp3)

    sp = sub.add_parser("place", help="choose the relay position and height")
    common(sp)
    sp.add_argument("--grid", type=float, default=25.0, help="horizontal search step in m")
    sp.add_argument("--heights", default="20:100:10", help="candidate relay heights in m")
    sp.add_argument("--demand-resolution", type=float, default=None, help="demand lattice spacing (default grid)")
    sp.add_argument("--margin", type=float, default=0.0, help="extend the search box beyond the UE region")
    sp.set_defaults(fn=cmd_place)

    sp = sub.add_parser("calibrate", help="fit the path-loss exponent to a measured range")
    common(sp, out=False)
    sp.add_argument("--target-m", type=float, default=800.0, help="measured range in m")
    sp.add_argument("--height", type=float, default=60.0, help="relay height of the measurement in m")
    sp.add_argument("--sf", type=int, choices=range(7, 13), help="override every spreading factor")
    sp.add_argument("--write-scenario", metavar="PATH", help="write a copy of the scenario with the fitted model")
    sp.set_defaults(fn=cmd_calibrate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NoFeasiblePlacement as exc:
        print(f"no feasible placement: {exc}", file=sys.stderr)
        return EXIT_NO_PLACEMENT
    except (ScenarioError, CalibrationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # out-of-bounds geometry and similar bad inputs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
