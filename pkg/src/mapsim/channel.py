"""Radio links: geometry, path loss, shadowing, fading, SINR and Shannon rate.

Two link classes are modeled. Air-to-ground mmWave links use free-space
path loss with an elevation-dependent line-of-sight probability and
class-dependent shadowing. Ground-to-ground sub-6GHz links use an
alpha-beta-gamma (ABG) path-loss form with separate LoS/NLoS parameter
triples. All functions are pure given an explicit random generator and
accept scalars or numpy arrays for the numeric arguments.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Location3D

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact

DEGREES = "degrees"
RADIANS = "radians"


class LinkClass(enum.Enum):
    MMWAVE_ATG = "mmwave_atg"
    SUB6_GTG = "sub6_gtg"


@dataclass(frozen=True)
class ChannelParams:
    """Per-link-class radio parameters.

    One instance describes the mmWave air-to-ground link of a mobile
    access point, another the sub-6GHz link of the macro station; the
    unused fields of each class are kept so a single config block can
    describe either link.
    """

    carrier_freq_ghz: float
    bandwidth_hz: float
    noise_density_dbm_per_hz: float
    shadow_sigma_los_db: float
    shadow_sigma_nlos_db: float
    # S-curve parameters of the LoS probability (air-to-ground only).
    los_alpha: float
    los_beta: float
    # Second S-curve row shipped with the defaults; stored, unused by default.
    los_alpha_nlos: float
    los_beta_nlos: float
    # ABG path-loss triples (ground-to-ground only).
    abg_alpha_los: float
    abg_beta_los: float
    abg_eta_los: float
    abg_alpha_nlos: float
    abg_beta_nlos: float
    abg_eta_nlos: float
    tx_power_dbm: float
    antenna_gain_main_dbi: float
    antenna_gain_side_dbi: float
    aperture_angle_deg: float
    nakagami_nu: float
    angle_unit: str = DEGREES
    fading_enabled: bool = True

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be > 0")
        if not 0 < self.aperture_angle_deg <= 180:
            raise ValueError("aperture_angle_deg must be in (0, 180]")
        if self.nakagami_nu <= 0:
            raise ValueError("nakagami_nu must be > 0")
        if self.shadow_sigma_los_db < 0 or self.shadow_sigma_nlos_db < 0:
            raise ValueError("shadowing sigmas must be >= 0")
        if self.angle_unit not in (DEGREES, RADIANS):
            raise ValueError("angle_unit must be 'degrees' or 'radians'")


def default_map_channel(**overrides) -> ChannelParams:
    """mmWave air-to-ground defaults (28 GHz, 500 MHz, directive antenna).

    Transmit power and the two-level antenna gains are invented defaults;
    shadowing sigmas are the square roots of the configured variances
    (12 dB^2 for this link class).
    """
    params = ChannelParams(
        carrier_freq_ghz=28.0,
        bandwidth_hz=500e6,
        noise_density_dbm_per_hz=-174.0,
        shadow_sigma_los_db=math.sqrt(12.0),
        shadow_sigma_nlos_db=math.sqrt(12.0),
        los_alpha=10.37,
        los_beta=0.05,
        los_alpha_nlos=35.85,
        los_beta_nlos=0.04,
        abg_alpha_los=0.0,
        abg_beta_los=0.0,
        abg_eta_los=0.0,
        abg_alpha_nlos=0.0,
        abg_beta_nlos=0.0,
        abg_eta_nlos=0.0,
        tx_power_dbm=30.0,
        antenna_gain_main_dbi=15.0,
        antenna_gain_side_dbi=-10.0,
        aperture_angle_deg=90.0,
        nakagami_nu=1.0,
    )
    return replace(params, **overrides) if overrides else params


def default_mbs_channel(**overrides) -> ChannelParams:
    """Sub-6GHz ground defaults (2 GHz, 10 MHz, 17 dBi, 180 deg aperture)."""
    params = ChannelParams(
        carrier_freq_ghz=2.0,
        bandwidth_hz=10e6,
        noise_density_dbm_per_hz=-174.0,
        shadow_sigma_los_db=math.sqrt(3.0),
        shadow_sigma_nlos_db=math.sqrt(3.0),
        los_alpha=0.0,
        los_beta=0.0,
        los_alpha_nlos=0.0,
        los_beta_nlos=0.0,
        abg_alpha_los=2.0,
        abg_beta_los=31.4,
        abg_eta_los=2.1,
        abg_alpha_nlos=3.5,
        abg_beta_nlos=24.4,
        abg_eta_nlos=1.9,
        tx_power_dbm=46.0,
        antenna_gain_main_dbi=17.0,
        antenna_gain_side_dbi=17.0,
        aperture_angle_deg=180.0,
        nakagami_nu=1.0,
    )
    return replace(params, **overrides) if overrides else params


@dataclass(frozen=True)
class LinkBudget:
    """Intermediate link quantities, kept for inspection and CSV dumps."""

    pathloss_db: float
    rx_power_dbm: float
    sinr_linear: float
    rate_bps: float

    def __post_init__(self):
        if self.rate_bps < 0 or self.sinr_linear < 0:
            raise ValueError("rate and SINR must be >= 0")


def db_to_linear(db):
    """dB (or dBm) to linear power (or mW)."""
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    """Linear power to dB. Input must be > 0."""
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def elevation_from_offsets(dz, horizontal, unit: str = DEGREES):
    """Elevation angle from a height difference and a ground distance.

    dz > 0 means the first endpoint is above the second. A zero ground
    distance gives the vertical-link angle (90 degrees), not an error.
    """
    angle = np.arctan2(np.asarray(dz, dtype=float), np.asarray(horizontal, dtype=float))
    if unit == DEGREES:
        angle = np.degrees(angle)
    return angle


def elevation_angle(map_loc: Location3D, ue_loc: Location3D, unit: str = DEGREES) -> float:
    """Elevation angle of the aerial endpoint as seen from the ground one."""
    horizontal = math.hypot(map_loc.x - ue_loc.x, map_loc.y - ue_loc.y)
    return float(elevation_from_offsets(map_loc.z - ue_loc.z, horizontal, unit))


def los_probability(theta, params: ChannelParams):
    """LoS probability 1 / (1 + a*exp(-b*(theta - a))).

    theta must be expressed in params.angle_unit; the shipped S-curve
    constants are calibrated for degrees.
    """
    exponent = -params.los_beta * (np.asarray(theta, dtype=float) - params.los_alpha)
    # exp overflow guard; the probability underflows to 0 long before this.
    exponent = np.clip(exponent, -700.0, 700.0)
    return 1.0 / (1.0 + params.los_alpha * np.exp(exponent))


def atg_pathloss(distance_m, los: bool, params: ChannelParams, shadowing_db=0.0):
    """Air-to-ground path loss in dB: free-space term plus shadowing.

    The LoS class changes only the shadowing deviation, which the caller
    draws (sigma per class) and passes in.
    """
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("distance_m must be > 0")
    f_hz = params.carrier_freq_ghz * 1e9
    fspl = 20.0 * np.log10(4.0 * np.pi * f_hz * distance_m / SPEED_OF_LIGHT)
    return fspl + shadowing_db


def expected_atg_pathloss(p_los, pl_los_db, pl_nlos_db):
    """LoS-probability mixture of the two path losses, taken in dB."""
    p_los = np.asarray(p_los, dtype=float)
    return p_los * pl_los_db + (1.0 - p_los) * pl_nlos_db


def gtg_pathloss(distance_m, los: bool, params: ChannelParams, shadowing_db=0.0):
    """Ground-to-ground ABG path loss in dB for the given LoS class."""
    distance_m = np.asarray(distance_m, dtype=float)
    if np.any(distance_m <= 0):
        raise ValueError("distance_m must be > 0")
    if los:
        alpha, beta, eta = params.abg_alpha_los, params.abg_beta_los, params.abg_eta_los
    else:
        alpha, beta, eta = params.abg_alpha_nlos, params.abg_beta_nlos, params.abg_eta_nlos
    return (
        10.0 * alpha * np.log10(distance_m)
        + beta
        + 10.0 * eta * np.log10(params.carrier_freq_ghz)
        + shadowing_db
    )


def sample_fading(nu: float, rng: np.random.Generator, size=None):
    """Unit-mean Nakagami power gain: Gamma(shape=nu, scale=1/nu)."""
    if nu <= 0:
        raise ValueError("nu must be > 0")
    return rng.gamma(shape=nu, scale=1.0 / nu, size=size)


def antenna_gain_dbi(elevation_deg, params: ChannelParams):
    """Two-level directive pattern, boresight pointing straight down.

    A receiver is inside the main lobe when the angle off boresight is at
    most half the aperture, i.e. elevation >= 90 - aperture/2.
    """
    threshold = 90.0 - params.aperture_angle_deg / 2.0
    return np.where(
        np.asarray(elevation_deg, dtype=float) >= threshold,
        params.antenna_gain_main_dbi,
        params.antenna_gain_side_dbi,
    )


def noise_power_dbm(params: ChannelParams, bandwidth_hz=None):
    """Thermal noise over the given bandwidth (defaults to the full band)."""
    bw = params.bandwidth_hz if bandwidth_hz is None else bandwidth_hz
    return params.noise_density_dbm_per_hz + 10.0 * np.log10(bw)


def sinr(serving_rx_dbm, interferer_rx_dbm, noise_dbm) -> float:
    """Linear SINR from dBm powers; the interferer list may be empty."""
    signal = float(db_to_linear(serving_rx_dbm))
    total = float(db_to_linear(noise_dbm))
    for rx in interferer_rx_dbm:
        total += float(db_to_linear(rx))
    return signal / total


def shannon_rate(bandwidth_hz, sinr_linear):
    """Shannon capacity B * log2(1 + SINR) in bit/s."""
    return bandwidth_hz * np.log2(1.0 + np.asarray(sinr_linear, dtype=float))
