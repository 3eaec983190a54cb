"""Radio-layer maths: LoRa airtime, propagation over terrain, demodulation and capture.

All functions are pure. Randomness (shadowing) is only used when the caller
passes an ``rng`` with a ``gauss`` method, normally a stream owned by the engine.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from .geometry import Position, StrictModel, Terrain, altitude, distance_3d, horizontal_distance

BANDWIDTHS_HZ = (125e3, 250e3, 500e3)
SPREADING_FACTORS = range(7, 13)
CODING_RATES = ("4/5", "4/6", "4/7", "4/8")
EU868_MAX_TX_POWER_DBM = 14.0
MAX_LORA_PAYLOAD = 255

# SX1276 family figures at 125 kHz, indexed by SF 7..12.
SENSITIVITY_DBM = (-123.0, -126.0, -129.0, -132.0, -134.5, -137.0)
SNR_THRESHOLD_DB = (-7.5, -10.0, -12.5, -15.0, -17.5, -20.0)

CAPTURE_THRESHOLD_DB = 6.0
LORA_NOISE_FIGURE_DB = 6.0
NBIOT_NOISE_FIGURE_DB = 5.0
NBIOT_NOISE_BANDWIDTH_HZ = 180e3
NBIOT_SUBCARRIERS_PER_PRB = 12
SPEED_OF_LIGHT = 299_792_458.0


class InvalidRadioParams(ValueError):
    pass


class ZeroDistance(ValueError):
    pass


class LoRaRadioParams(StrictModel):
    frequency_hz: float = 868.1e6
    bandwidth_hz: float = 125e3
    spreading_factor: int = 7
    coding_rate: str = "4/5"
    tx_power_dbm: float = 14.0
    antenna_gain_dbi: float = 0.0
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True

    @property
    def cr_index(self) -> int:
        """Coding-rate denominator minus four (1 for 4/5 ... 4 for 4/8)."""
        return CODING_RATES.index(self.coding_rate) + 1


class NbIotRadioParams(StrictModel):
    """The backhaul link: the relay's NB-IoT module and the Tier 1 eNB it camps on."""

    tx_power_dbm: float = 23.0
    antenna_gain_dbi: float = 0.0
    carrier_hz: float = 800e6
    mcl_db: float = 164.0
    enb_position: Position
    enb_tx_power_dbm: float = 35.0
    enb_antenna_gain_dbi: float = 0.0


class PathLossModel(StrictModel):
    variant: Literal["free_space", "log_distance", "air_to_ground"] = "free_space"
    # log_distance
    n: float = 2.0
    d0_m: float = 1.0
    # air_to_ground (suburban defaults)
    a: float = 4.88
    b: float = 0.43
    eta_los_db: float = 0.1
    eta_nlos_db: float = 21.0
    # excess applied by free_space / log_distance when terrain blocks the path
    nlos_excess_db: float = 21.0
    shadowing_sigma_db: float = 0.0


@dataclass(frozen=True)
class LinkSample:
    rssi_dbm: float
    snr_db: float
    path_loss_db: float
    distance_m: float
    los: bool


@dataclass(frozen=True)
class LosResult:
    los: bool
    max_obstruction_m: float


@dataclass(frozen=True)
class NbIotMetrics:
    rsrp_dbm: float
    rsrq_db: float
    rssi_dbm: float
    snr_db: float


@dataclass(frozen=True)
class Reception:
    """One transmission as seen by a single receiver."""

    frame: Any
    rssi_dbm: float
    sf: int
    start: float
    end: float
    frequency_hz: float = 868.1e6


def check_lora_params(p: LoRaRadioParams) -> None:
    if p.spreading_factor not in SPREADING_FACTORS:
        raise InvalidRadioParams(f"spreading factor {p.spreading_factor} not in 7..12")
    if p.bandwidth_hz not in BANDWIDTHS_HZ:
        raise InvalidRadioParams(f"bandwidth {p.bandwidth_hz} Hz not supported")
    if p.coding_rate not in CODING_RATES:
        raise InvalidRadioParams(f"coding rate {p.coding_rate!r} not supported")


def low_data_rate_optimize(sf: int, bandwidth_hz: float) -> bool:
    return sf in (11, 12) and bandwidth_hz == 125e3


def lora_airtime(p: LoRaRadioParams, payload_len: int) -> float:
    """Time on air in seconds for a PHY payload of ``payload_len`` bytes."""
    check_lora_params(p)
    if not 0 <= payload_len <= MAX_LORA_PAYLOAD:
        raise ValueError(f"payload length {payload_len} outside 0..{MAX_LORA_PAYLOAD}")
    sf = p.spreading_factor
    t_sym = 2**sf / p.bandwidth_hz
    de = 1 if low_data_rate_optimize(sf, p.bandwidth_hz) else 0
    ih = 0 if p.explicit_header else 1
    crc = 1 if p.crc_on else 0
    numerator = 8 * payload_len - 4 * sf + 28 + 16 * crc - 20 * ih
    n_payload = 8 + max(math.ceil(numerator / (4 * (sf - 2 * de))) * (p.cr_index + 4), 0)
    return (p.preamble_symbols + 4.25 + n_payload) * t_sym


def fspl_db(distance_m: float, freq_hz: float) -> float:
    return 20 * math.log10(distance_m) + 20 * math.log10(freq_hz) - 147.55


def noise_floor(bandwidth_hz: float, noise_figure_db: float) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return -174.0 + 10 * math.log10(bandwidth_hz) + noise_figure_db


def terrain_los(a: Position, b: Position, t: Terrain | None) -> LosResult:
    """Sample the a-b segment at <= cell_size/2 spacing against the heightmap.

    A sample is blocked only when the ground is strictly above the segment.
    """
    if t is None:
        return LosResult(True, 0.0)
    za, zb = altitude(a, t), altitude(b, t)  # raises OutOfBounds
    if t.is_flat:
        return LosResult(True, 0.0)
    length = horizontal_distance(a, b)
    n = max(1, math.ceil(length / (t.cell_size_m / 2)))
    s = np.linspace(0.0, 1.0, n + 1)
    xs = a.x + (b.x - a.x) * s
    ys = a.y + (b.y - a.y) * s
    intrusion = t.ground_many(xs, ys) - (za + (zb - za) * s)
    deepest = float(intrusion.max())
    return LosResult(deepest <= 0.0, max(deepest, 0.0))


def _a2g_excess(model: PathLossModel, elevation_deg: float) -> float:
    p_los = 1.0 / (1.0 + model.a * math.exp(-model.b * (elevation_deg - model.a)))
    return p_los * model.eta_los_db + (1.0 - p_los) * model.eta_nlos_db


def _mean_loss(model: PathLossModel, d: float, horizontal: float, dz: float, los: bool, freq_hz: float) -> float:
    if model.variant == "free_space":
        loss = fspl_db(d, freq_hz)
        return loss if los else loss + model.nlos_excess_db
    if model.variant == "log_distance":
        loss = fspl_db(model.d0_m, freq_hz) + 10 * model.n * math.log10(d / model.d0_m)
        return loss if los else loss + model.nlos_excess_db
    loss = fspl_db(d, freq_hz)
    if not los:
        return loss + model.eta_nlos_db
    return loss + _a2g_excess(model, math.degrees(math.atan2(abs(dz), horizontal)))


def path_loss(
    model: PathLossModel,
    tx: Position,
    rx: Position,
    terrain: Terrain | None,
    freq_hz: float,
    rng: Any = None,
) -> float:
    """Path loss in dB, with terrain NLoS excess and optional shadowing draw."""
    return _path_loss(model, tx, rx, terrain, freq_hz, rng)[0]


def _path_loss(model, tx, rx, terrain, freq_hz, rng) -> tuple[float, float, bool]:
    d = distance_3d(tx, rx, terrain)
    if d == 0.0:
        raise ZeroDistance("transmitter and receiver coincide")
    los = terrain_los(tx, rx, terrain).los
    dz = altitude(tx, terrain) - altitude(rx, terrain)
    loss = _mean_loss(model, d, horizontal_distance(tx, rx), dz, los, freq_hz)
    if rng is not None and model.shadowing_sigma_db > 0:
        loss += rng.gauss(0.0, model.shadowing_sigma_db)
    return loss, d, los


def link_sample(
    tx: Position,
    rx: Position,
    radio: LoRaRadioParams,
    rx_gain_dbi: float,
    model: PathLossModel,
    terrain: Terrain | None,
    noise_figure_db: float = LORA_NOISE_FIGURE_DB,
    rng: Any = None,
) -> LinkSample:
    loss, d, los = _path_loss(model, tx, rx, terrain, radio.frequency_hz, rng)
    rssi = radio.tx_power_dbm + radio.antenna_gain_dbi + rx_gain_dbi - loss
    return LinkSample(
        rssi_dbm=rssi,
        snr_db=rssi - noise_floor(radio.bandwidth_hz, noise_figure_db),
        path_loss_db=loss,
        distance_m=d,
        los=los,
    )


def sensitivity_dbm(sf: int, bandwidth_hz: float = 125e3, table: Sequence[float] | None = None) -> float:
    base = (table or SENSITIVITY_DBM)[sf - 7]
    return base + 10 * math.log10(bandwidth_hz / 125e3)


def snr_threshold_db(sf: int, table: Sequence[float] | None = None) -> float:
    return (table or SNR_THRESHOLD_DB)[sf - 7]


def lora_demod_ok(
    sample: LinkSample,
    sf: int,
    bandwidth_hz: float = 125e3,
    sensitivity: Sequence[float] | None = None,
    snr_threshold: Sequence[float] | None = None,
) -> bool:
    if sf not in SPREADING_FACTORS:
        raise InvalidRadioParams(f"spreading factor {sf} not in 7..12")
    return (
        sample.rssi_dbm >= sensitivity_dbm(sf, bandwidth_hz, sensitivity)
        and sample.snr_db >= snr_threshold_db(sf, snr_threshold)
    )


def collision_resolve(
    transmissions: Sequence[Reception], capture_threshold_db: float = CAPTURE_THRESHOLD_DB
) -> list[bool]:
    """Survival flag per transmission, aligned with the input order.

    A transmission survives when no same-SF, same-frequency transmission
    overlaps it in time, or when it beats the strongest such interferer by at
    least the capture threshold.
    """
    outcome = []
    for i, tx in enumerate(transmissions):
        strongest = -math.inf
        for j, other in enumerate(transmissions):
            if i == j or other.sf != tx.sf or other.frequency_hz != tx.frequency_hz:
                continue
            if other.start < tx.end and tx.start < other.end:
                strongest = max(strongest, other.rssi_dbm)
        outcome.append(tx.rssi_dbm - strongest >= capture_threshold_db)
    return outcome


def nbiot_metrics(rssi_dbm: float, noise_figure_db: float = NBIOT_NOISE_FIGURE_DB) -> NbIotMetrics:
    """Downlink quality figures for an unloaded single-PRB cell."""
    if not math.isfinite(rssi_dbm):
        raise ValueError("rssi must be finite")
    rsrp = rssi_dbm - 10 * math.log10(NBIOT_SUBCARRIERS_PER_PRB)
    return NbIotMetrics(
        rsrp_dbm=rsrp,
        rsrq_db=rsrp - rssi_dbm,
        rssi_dbm=rssi_dbm,
        snr_db=rssi_dbm - noise_floor(NBIOT_NOISE_BANDWIDTH_HZ, noise_figure_db),
    )


def propagation_delay(distance_m: float) -> float:
    return distance_m / SPEED_OF_LIGHT


def mean_path_loss_many(
    model: PathLossModel,
    tx: Position,
    rx_x: np.ndarray,
    rx_y: np.ndarray,
    rx_z_agl: np.ndarray,
    terrain: Terrain | None,
    freq_hz: float,
) -> np.ndarray:
    """Deterministic path loss from one transmitter to many receivers at once.

    Same maths as ``path_loss`` with shadowing at its mean; used by the
    placement objective where thousands of links are evaluated per candidate.
    """
    t_alt = altitude(tx, terrain)
    if terrain is None:
        r_alt = rx_z_agl.astype(float)
    else:
        r_alt = terrain.ground_many(rx_x, rx_y) + rx_z_agl
    if terrain is None or terrain.is_flat:
        los = np.ones(rx_x.shape, dtype=bool)
    else:
        length = np.hypot(rx_x - tx.x, rx_y - tx.y)
        n = max(1, math.ceil(float(length.max(initial=0.0)) / (terrain.cell_size_m / 2)))
        s = np.linspace(0.0, 1.0, n + 1)[None, :]
        xs = tx.x + (rx_x[:, None] - tx.x) * s
        ys = tx.y + (rx_y[:, None] - tx.y) * s
        zs = t_alt + (r_alt[:, None] - t_alt) * s
        los = (terrain.ground_many(xs, ys) - zs).max(axis=1) <= 0.0
    horizontal = np.hypot(rx_x - tx.x, rx_y - tx.y)
    dz = t_alt - r_alt
    d = np.sqrt(horizontal**2 + dz**2)
    if np.any(d == 0.0):
        raise ZeroDistance("transmitter coincides with a receiver")
    if model.variant == "log_distance":
        loss = fspl_db(model.d0_m, freq_hz) + 10 * model.n * np.log10(d / model.d0_m)
        return np.where(los, loss, loss + model.nlos_excess_db)
    loss = 20 * np.log10(d) + 20 * math.log10(freq_hz) - 147.55
    if model.variant == "free_space":
        return np.where(los, loss, loss + model.nlos_excess_db)
    theta = np.degrees(np.arctan2(np.abs(dz), horizontal))
    p_los = 1.0 / (1.0 + model.a * np.exp(-model.b * (theta - model.a)))
    excess = p_los * model.eta_los_db + (1.0 - p_los) * model.eta_nlos_db
    return np.where(los, loss + excess, loss + model.eta_nlos_db)
