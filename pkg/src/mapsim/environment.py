"""Discrete-time network environment.

Holds the single source of truth (users, access points, associations,
demands, mobility centroids) and implements the per-step dynamics: MAP
movement under the zone and step-size constraints, centroid random-waypoint
user mobility, Poisson traffic, max-SNR association under the capacity cap,
and the sampled sum-rate / load metrics.

Conventions (documented for trajectory reproducibility):
  FORWARD/BACKWARD move +y/-y, RIGHT/LEFT move +x/-x, UP/DOWN move +z/-z.
  The macro station (MBS) is the fallback server with unbounded capacity
  and is identified by the id -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import channel as ch
from .attention import MAP_BRANCH, UE_BRANCH, MessageSet
from .geometry import Location3D, LocationNormalizer, stack_locations

MBS_ID = -1


class Action(Enum):
    FORWARD = 0
    BACKWARD = 1
    UP = 2
    DOWN = 3
    LEFT = 4
    RIGHT = 5
    HOVER = 6


ACTION_UNIT_VECTORS = {
    Action.FORWARD: np.array([0.0, 1.0, 0.0]),
    Action.BACKWARD: np.array([0.0, -1.0, 0.0]),
    Action.UP: np.array([0.0, 0.0, 1.0]),
    Action.DOWN: np.array([0.0, 0.0, -1.0]),
    Action.LEFT: np.array([-1.0, 0.0, 0.0]),
    Action.RIGHT: np.array([1.0, 0.0, 0.0]),
    Action.HOVER: np.array([0.0, 0.0, 0.0]),
}


@dataclass(frozen=True)
class Channels:
    """Channel parameter pair: mmWave MAP links and the sub-6GHz MBS link."""

    map: ch.ChannelParams
    mbs: ch.ChannelParams


def default_channels(**overrides) -> Channels:
    return Channels(
        map=ch.default_map_channel(**overrides.get("map", {})),
        mbs=ch.default_mbs_channel(**overrides.get("mbs", {})),
    )


@dataclass
class EnvConfig:
    area_x_m: float = 200.0
    area_y_m: float = 200.0
    z_min_m: float = 10.0
    z_max_m: float = 150.0
    step_size_m: float = 5.0
    max_connections: int = 15
    num_maps: int = 3
    num_ues: int = 25
    episode_len: int = 300
    neighborhood_ue_max: int = 15
    neighborhood_map_max: int = 3
    ue_speed_mps: float = 0.8
    traffic_poisson_mbps: float = 1000.0
    centroid_radius_m: float = 25.0
    num_centroids: int | None = None  # defaults to num_maps
    step_duration_s: float = 1.0
    # The MBS is a distant macro site so coverage-driven association
    # favours well-placed MAPs; invented default, config-exposed.
    mbs_x_m: float = -800.0
    mbs_y_m: float = -800.0
    mbs_z_m: float = 25.0
    # Ground link LoS rule: Bernoulli(exp(-d / decay)) per step.
    gtg_los_decay_m: float = 150.0
    inter_map_interference: bool = True
    ue_jitter_mps: float = 0.0

    def validate(self) -> None:
        if self.area_x_m <= 0 or self.area_y_m <= 0:
            raise ValueError("deployment area must have positive extent")
        if self.step_size_m <= 0:
            raise ValueError("step_size_m must be > 0")
        if self.z_min_m > self.z_max_m:
            raise ValueError("z_min_m must not exceed z_max_m (zone too small)")
        if self.neighborhood_ue_max < 1 or self.neighborhood_map_max < 1:
            raise ValueError("neighborhood caps must be >= 1")
        if self.num_maps < 1:
            raise ValueError("need at least one MAP")
        if self.num_ues < 0:
            raise ValueError("num_ues must be >= 0")
        if self.max_connections < 1:
            raise ValueError("max_connections must be >= 1")
        if self.ue_speed_mps < 0 or self.centroid_radius_m < 0:
            raise ValueError("speeds and radii must be >= 0")

    @property
    def resolved_num_centroids(self) -> int:
        return self.num_centroids if self.num_centroids is not None else self.num_maps

    @property
    def mbs_location(self) -> Location3D:
        return Location3D(self.mbs_x_m, self.mbs_y_m, self.mbs_z_m)

    def normalizer(self) -> LocationNormalizer:
        return LocationNormalizer(self.area_x_m, self.area_y_m, self.z_max_m)


@dataclass
class UeState:
    id: int
    loc: Location3D  # z = 0
    demand_bps: float
    serving_ap: int = MBS_ID  # MAP index or MBS_ID
    centroid_id: int = 0


@dataclass
class MapState:
    id: int
    loc: Location3D
    connected_ues: set = field(default_factory=set)


@dataclass
class Centroid:
    xy: np.ndarray  # (2,)
    waypoint: np.ndarray  # (2,)
    speed: float


@dataclass
class NetworkState:
    time: int
    ues: list
    maps: list
    centroids: list
    rng: np.random.Generator
    config: EnvConfig

    def ue_positions(self) -> np.ndarray:
        return stack_locations(u.loc for u in self.ues)

    def map_positions(self) -> np.ndarray:
        return stack_locations(m.loc for m in self.maps)


def sample_traffic(k: int, poisson_mbps: float, rng: np.random.Generator) -> np.ndarray:
    """Per-user demands in bit/s, Poisson with the given mean in Mbps."""
    if poisson_mbps < 0:
        raise ValueError("poisson_mbps must be >= 0")
    return rng.poisson(poisson_mbps, size=k).astype(float) * 1e6


def _clamp_to_area(x: float, y: float, config: EnvConfig) -> tuple:
    return (min(max(x, 0.0), config.area_x_m), min(max(y, 0.0), config.area_y_m))


def reset(config: EnvConfig, rng: np.random.Generator, channels: Channels | None = None) -> NetworkState:
    """Deploy MAPs, centroids and users, then compute the initial association.

    Users are split as evenly as possible across the mobility centroids
    (the first K mod C centroids take one extra) and placed uniformly in
    a disc of centroid_radius_m around their centroid.
    """
    config.validate()
    channels = channels or default_channels()

    maps = [
        MapState(
            id=i,
            loc=Location3D(
                rng.uniform(0.0, config.area_x_m),
                rng.uniform(0.0, config.area_y_m),
                rng.uniform(config.z_min_m, config.z_max_m),
            ),
        )
        for i in range(config.num_maps)
    ]

    n_centroids = config.resolved_num_centroids
    centers = [
        np.array([rng.uniform(0.0, config.area_x_m), rng.uniform(0.0, config.area_y_m)])
        for _ in range(n_centroids)
    ]

    k, c = config.num_ues, n_centroids
    sizes = [k // c + (1 if i < k % c else 0) for i in range(c)]

    ues = []
    uid = 0
    for cid, size in enumerate(sizes):
        for _ in range(size):
            radius = config.centroid_radius_m * math.sqrt(rng.random())
            angle = rng.uniform(0.0, 2.0 * math.pi)
            x, y = _clamp_to_area(
                centers[cid][0] + radius * math.cos(angle),
                centers[cid][1] + radius * math.sin(angle),
                config,
            )
            ues.append(UeState(id=uid, loc=Location3D(x, y, 0.0), demand_bps=0.0, centroid_id=cid))
            uid += 1

    centroids = [
        Centroid(
            xy=centers[i],
            waypoint=np.array(
                [rng.uniform(0.0, config.area_x_m), rng.uniform(0.0, config.area_y_m)]
            ),
            speed=config.ue_speed_mps,
        )
        for i in range(n_centroids)
    ]

    demands = sample_traffic(k, config.traffic_poisson_mbps, rng)
    for ue, demand in zip(ues, demands):
        ue.demand_bps = float(demand)

    state = NetworkState(time=0, ues=ues, maps=maps, centroids=centroids, rng=rng, config=config)
    associate(state, channels)
    return state


def _association_snr_db(state: NetworkState, channels: Channels):
    """Expected-path-loss SNR of every UE to every MAP and to the MBS.

    Uses the LoS-probability mixture with zero shadowing and no fading so
    that association does not flap with fast channel randomness.
    """
    config = state.config
    k = len(state.ues)
    m = len(state.maps)
    if k == 0:
        return np.zeros((0, m)), np.zeros(0)
    ue_pos = state.ue_positions()
    map_pos = state.map_positions()

    diff = map_pos[None, :, :] - ue_pos[:, None, :]  # (K, M, 3)
    horiz = np.hypot(diff[:, :, 0], diff[:, :, 1])
    dist = np.sqrt((diff**2).sum(axis=2))
    elev = ch.elevation_from_offsets(diff[:, :, 2], horiz, ch.DEGREES)
    gain = ch.antenna_gain_dbi(elev, channels.map)
    # Both LoS classes share the free-space mean, so the expected
    # air-to-ground path loss reduces to it.
    pl = ch.atg_pathloss(np.maximum(dist, 1e-6), True, channels.map)
    rx_map = channels.map.tx_power_dbm + gain - pl
    snr_map = rx_map - ch.noise_power_dbm(channels.map)

    mbs = config.mbs_location
    mbs_diff = mbs.as_array()[None, :] - ue_pos
    mbs_horiz = np.hypot(mbs_diff[:, 0], mbs_diff[:, 1])
    mbs_dist = np.sqrt((mbs_diff**2).sum(axis=1))
    mbs_elev = ch.elevation_from_offsets(mbs_diff[:, 2], mbs_horiz, ch.DEGREES)
    mbs_gain = ch.antenna_gain_dbi(mbs_elev, channels.mbs)
    p_los = np.exp(-mbs_dist / config.gtg_los_decay_m)
    safe_dist = np.maximum(mbs_dist, 1e-6)
    pl_mbs = p_los * ch.gtg_pathloss(safe_dist, True, channels.mbs) + (1.0 - p_los) * ch.gtg_pathloss(safe_dist, False, channels.mbs)
    rx_mbs = channels.mbs.tx_power_dbm + mbs_gain - pl_mbs
    snr_mbs = rx_mbs - ch.noise_power_dbm(channels.mbs)
    return snr_map, snr_mbs


def associate(state: NetworkState, channels: Channels, rng: np.random.Generator | None = None) -> NetworkState:
    """Max-SNR association under the per-MAP capacity cap.

    UE-MAP pairs whose SNR beats that UE's MBS SNR are granted greedily in
    descending SNR order while the MAP has free slots; everyone else falls
    back to the MBS (unbounded capacity). Ties break on lower UE id, then
    lower MAP id. The rng argument is accepted for interface symmetry;
    expected-path-loss association is deterministic.
    """
    snr_map, snr_mbs = _association_snr_db(state, channels)
    k, m = snr_map.shape

    for ap in state.maps:
        ap.connected_ues = set()

    candidates = [
        (-snr_map[j, i], j, i)
        for j in range(k)
        for i in range(m)
        if snr_map[j, i] > snr_mbs[j]
    ]
    candidates.sort()

    assigned = [MBS_ID] * k
    for _, j, i in candidates:
        if assigned[j] != MBS_ID:
            continue
        if len(state.maps[i].connected_ues) >= state.config.max_connections:
            continue
        assigned[j] = i
        state.maps[i].connected_ues.add(j)

    for ue, ap in zip(state.ues, assigned):
        ue.serving_ap = ap
    return state


def move_ues(state: NetworkState, dt: float | None = None, rng: np.random.Generator | None = None) -> None:
    """Advance the centroid random-waypoint mobility by one step.

    Each centroid heads to its waypoint at its speed; on arrival (within
    one step of travel) it snaps there and draws a fresh uniform waypoint.
    Member users translate rigidly with their centroid, clamped to the
    deployment area.
    """
    config = state.config
    rng = rng or state.rng
    dt = config.step_duration_s if dt is None else dt

    displacements = []
    for centroid in state.centroids:
        travel = centroid.speed * dt
        to_target = centroid.waypoint - centroid.xy
        dist = float(np.hypot(*to_target))
        if travel <= 0.0 or dist == 0.0:
            disp = np.zeros(2)
            if travel > 0.0:
                centroid.waypoint = np.array(
                    [rng.uniform(0.0, config.area_x_m), rng.uniform(0.0, config.area_y_m)]
                )
        elif dist <= travel:
            disp = to_target.copy()
            centroid.xy = centroid.waypoint.copy()
            centroid.waypoint = np.array(
                [rng.uniform(0.0, config.area_x_m), rng.uniform(0.0, config.area_y_m)]
            )
        else:
            disp = to_target * (travel / dist)
            centroid.xy = centroid.xy + disp
        displacements.append(disp)

    jitter = config.ue_jitter_mps * dt
    for ue in state.ues:
        disp = displacements[ue.centroid_id]
        x, y = ue.loc.x + disp[0], ue.loc.y + disp[1]
        if jitter > 0.0:
            angle = rng.uniform(0.0, 2.0 * math.pi)
            x += jitter * math.cos(angle)
            y += jitter * math.sin(angle)
        x, y = _clamp_to_area(x, y, config)
        ue.loc = Location3D(x, y, 0.0)


def step(
    state: NetworkState,
    actions,
    channels: Channels,
    rng: np.random.Generator | None = None,
) -> NetworkState:
    """One environment step.

    MAPs move by step_size_m along their action axis and are clamped
    componentwise into the operation zone, then user mobility and fresh
    traffic are applied, the association is recomputed and time advances.
    """
    config = state.config
    if len(actions) != len(state.maps):
        raise ValueError(
            "expected %d actions, got %d" % (len(state.maps), len(actions))
        )
    rng = rng or state.rng

    for ap, action in zip(state.maps, actions):
        delta = ACTION_UNIT_VECTORS[action] * config.step_size_m
        x = min(max(ap.loc.x + delta[0], 0.0), config.area_x_m)
        y = min(max(ap.loc.y + delta[1], 0.0), config.area_y_m)
        z = min(max(ap.loc.z + delta[2], config.z_min_m), config.z_max_m)
        ap.loc = Location3D(x, y, z)

    move_ues(state, rng=rng)
    demands = sample_traffic(len(state.ues), config.traffic_poisson_mbps, rng)
    for ue, demand in zip(state.ues, demands):
        ue.demand_bps = float(demand)
    associate(state, channels, rng)
    state.time += 1
    return state


def _atg_sampled_link(
    ue_loc: Location3D, map_loc: Location3D, params: ch.ChannelParams, rng: np.random.Generator
):
    """(rx_power_dbm, pathloss_db) of one air-to-ground link, shadowing sampled."""
    horiz = math.hypot(map_loc.x - ue_loc.x, map_loc.y - ue_loc.y)
    dist = max(math.dist((map_loc.x, map_loc.y, map_loc.z), (ue_loc.x, ue_loc.y, ue_loc.z)), 1e-6)
    elev = float(ch.elevation_from_offsets(map_loc.z - ue_loc.z, horiz, ch.DEGREES))
    theta = elev if params.angle_unit == ch.DEGREES else math.radians(elev)
    p_los = float(ch.los_probability(theta, params))
    pl_los = float(ch.atg_pathloss(dist, True, params, rng.normal(0.0, params.shadow_sigma_los_db)))
    pl_nlos = float(ch.atg_pathloss(dist, False, params, rng.normal(0.0, params.shadow_sigma_nlos_db)))
    pl = float(ch.expected_atg_pathloss(p_los, pl_los, pl_nlos))
    gain = float(ch.antenna_gain_dbi(elev, params))
    return params.tx_power_dbm + gain - pl, pl


def _link_fading(params: ch.ChannelParams, rng: np.random.Generator) -> float:
    return float(ch.sample_fading(params.nakagami_nu, rng)) if params.fading_enabled else 1.0


def link_budgets(
    state: NetworkState, channels: Channels, rng: np.random.Generator | None = None
) -> list:
    """Per-UE link budget for the serving link, with sampled randomness.

    Shadowing and fading are redrawn per link per call; MAP-served users
    see the summed received power of all other MAPs as interference, MBS
    users occupy a disjoint band. Each access point splits its bandwidth
    equally among its connected users.
    """
    rng = rng or state.rng
    config = state.config
    counts = {ap.id: max(len(ap.connected_ues), 1) for ap in state.maps}
    mbs_count = max(sum(1 for u in state.ues if u.serving_ap == MBS_ID), 1)

    budgets = []
    for ue in state.ues:
        if ue.serving_ap == MBS_ID:
            params = channels.mbs
            mbs_loc = config.mbs_location
            dist = max(
                math.dist(
                    (mbs_loc.x, mbs_loc.y, mbs_loc.z), (ue.loc.x, ue.loc.y, ue.loc.z)
                ),
                1e-6,
            )
            los = rng.random() < math.exp(-dist / config.gtg_los_decay_m)
            sigma = params.shadow_sigma_los_db if los else params.shadow_sigma_nlos_db
            pl = float(ch.gtg_pathloss(dist, los, params, rng.normal(0.0, sigma)))
            horiz = math.hypot(mbs_loc.x - ue.loc.x, mbs_loc.y - ue.loc.y)
            elev = float(ch.elevation_from_offsets(mbs_loc.z - ue.loc.z, horiz, ch.DEGREES))
            rx = params.tx_power_dbm + float(ch.antenna_gain_dbi(elev, params)) - pl
            fading = _link_fading(params, rng)
            bw = params.bandwidth_hz / mbs_count
            noise = float(ch.noise_power_dbm(params, bw))
            sinr_lin = float(ch.db_to_linear(rx)) * fading / float(ch.db_to_linear(noise))
        else:
            params = channels.map
            serving = state.maps[ue.serving_ap]
            rx, pl = _atg_sampled_link(ue.loc, serving.loc, params, rng)
            fading = _link_fading(params, rng)
            signal = float(ch.db_to_linear(rx)) * fading
            interference = 0.0
            if config.inter_map_interference:
                for other in state.maps:
                    if other.id == ue.serving_ap:
                        continue
                    rx_i, _ = _atg_sampled_link(ue.loc, other.loc, params, rng)
                    interference += float(ch.db_to_linear(rx_i)) * _link_fading(params, rng)
            bw = params.bandwidth_hz / counts[ue.serving_ap]
            noise = float(ch.noise_power_dbm(params, bw))
            sinr_lin = signal / (float(ch.db_to_linear(noise)) + interference)
        rate = float(ch.shannon_rate(bw, sinr_lin))
        budgets.append(
            ch.LinkBudget(
                pathloss_db=float(pl), rx_power_dbm=float(rx), sinr_linear=sinr_lin, rate_bps=rate
            )
        )
    return budgets


def sum_rate(
    state: NetworkState, channels: Channels, rng: np.random.Generator | None = None
) -> float:
    """Effective network sum-rate: sum over users of min(demand, rate)."""
    budgets = link_budgets(state, channels, rng)
    return float(
        sum(min(ue.demand_bps, b.rate_bps) for ue, b in zip(state.ues, budgets))
    )


def network_load(state: NetworkState) -> np.ndarray:
    """Per-MAP fraction of all users it serves (zeros when there are none)."""
    k = len(state.ues)
    if k == 0:
        return np.zeros(len(state.maps))
    return np.array([len(ap.connected_ues) / k for ap in state.maps])


def neighborhood(state: NetworkState, agent: int, kind: str) -> list:
    """Nearest entities of one class, as locations ordered by distance.

    For kind MAP the agent itself is excluded; ties break on lower id.
    Caps come from the config (neighborhood_ue_max / neighborhood_map_max).
    """
    me = state.maps[agent].loc
    if kind == UE_BRANCH:
        entities = [(u.id, u.loc) for u in state.ues]
        cap = state.config.neighborhood_ue_max
    elif kind == MAP_BRANCH:
        entities = [(m.id, m.loc) for m in state.maps if m.id != agent]
        cap = state.config.neighborhood_map_max
    else:
        raise ValueError("kind must be %r or %r" % (UE_BRANCH, MAP_BRANCH))
    ranked = sorted(
        entities,
        key=lambda item: (math.dist((me.x, me.y, me.z), (item[1].x, item[1].y, item[1].z)), item[0]),
    )
    return [loc for _, loc in ranked[:cap]]


def agent_messages(state: NetworkState, agent: int, normalizer=None):
    """Build the two normalized message sets one agent encodes."""
    normalizer = normalizer or state.config.normalizer()
    own = normalizer.normalize(state.maps[agent].loc.as_array())
    ue_locs = neighborhood(state, agent, UE_BRANCH)
    map_locs = neighborhood(state, agent, MAP_BRANCH)
    ue_msgs = MessageSet(
        own_loc=own,
        neighbor_locs=normalizer.normalize(stack_locations(ue_locs)),
        kind=UE_BRANCH,
    )
    map_msgs = MessageSet(
        own_loc=own,
        neighbor_locs=normalizer.normalize(stack_locations(map_locs)),
        kind=MAP_BRANCH,
    )
    return ue_msgs, map_msgs
