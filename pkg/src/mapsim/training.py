"""Reward design, clustering targets, dual-clip PPO, and the train/test loops.

During training each agent is pulled toward the nearest assigned centroid
of the user clusters (coverage term) and, once close, toward a higher
network sum-rate (throughput term); the hard coverage indicator is
smoothed with a Gompertz gate. Clustering runs only during training; at
test time agents act greedily from their encoded neighbor messages alone.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .attention import MessageSet, StateRepresentation, encode, encode_backward
from .environment import (
    Action,
    Channels,
    EnvConfig,
    NetworkState,
    agent_messages,
    network_load,
    reset,
    step,
    sum_rate,
)
from .geometry import Location3D, distance
from .nets import (
    PolicyParams,
    adam_step,
    core_backward,
    core_forward,
    forward,
    init_adam,
    init_policy_params,
    named_tensors,
    sample_action,
)


class TrainingDiverged(RuntimeError):
    """Raised when a PPO update produces a non-finite loss."""


@dataclass
class RewardConfig:
    d0_m: float = 30.0
    d_max_m: float = math.hypot(200.0, 200.0)  # deployment-area diagonal
    r_avg_bps: float = 1e9  # initial sum-rate normalizer; tracked online
    gompertz_a: float = 0.9
    gompertz_b: float = 0.06  # per meter
    r_avg_window: int = 100  # episodes

    def __post_init__(self):
        if self.d0_m <= 0 or self.d_max_m <= 0 or self.r_avg_bps <= 0:
            raise ValueError("reference distance and normalizers must be > 0")


def reward_config_for(env: EnvConfig, **overrides) -> RewardConfig:
    """Reward defaults tied to an environment (d_max = area diagonal)."""
    overrides.setdefault("d_max_m", math.hypot(env.area_x_m, env.area_y_m))
    return RewardConfig(**overrides)


@dataclass
class PpoConfig:
    gamma: float = 0.6
    eps1: float = 0.01
    eps2: float = 0.5
    epochs_per_update: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("clip parameters must be > 0")


@dataclass
class ClusterAssignment:
    """Cluster centroids (z from the altitude rule) matched one-to-one to MAPs."""

    centroids: list
    map_to_centroid: np.ndarray

    def target_of(self, agent: int) -> Location3D:
        return self.centroids[int(self.map_to_centroid[agent])]


# ---------------------------------------------------------------------------
# Clustering targets


def kmeans(points: np.ndarray, m: int, rng: np.random.Generator, max_iter: int = 100, init: np.ndarray | None = None):
    """Lloyd's algorithm with kmeans++ seeding.

    Runs to an assignment fixpoint or max_iter sweeps; an empty cluster is
    re-seeded at the point farthest from its assigned centroid. Passing
    init (shape (m, d)) warm-starts Lloyd and skips seeding. With fewer
    points than clusters, duplicate-point clusters are allowed (warned).
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n == 0:
        raise ValueError("kmeans needs at least one point")

    if init is not None:
        centroids = np.array(init, dtype=float, copy=True)
    elif n < m:
        warnings.warn("fewer points than clusters; duplicating points", stacklevel=2)
        idx = [i % n for i in range(m)]
        centroids = points[idx].copy()
    else:
        centroids = _kmeans_pp_seed(points, m, rng)

    labels = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        # Re-seed empty clusters at the farthest point from its centroid.
        for c in range(m):
            if not np.any(new_labels == c):
                far = int(np.argmax(d2[np.arange(n), new_labels]))
                centroids[c] = points[far]
                d2[:, c] = ((points - centroids[c]) ** 2).sum(axis=1)
                new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(m):
            member = points[labels == c]
            if member.shape[0]:
                centroids[c] = member.mean(axis=0)
    return centroids, labels


def _kmeans_pp_seed(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < m:
        d2 = np.min(
            ((points[:, None, :] - points[chosen][None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0.0:
            chosen.append(int(rng.integers(n)))
            continue
        u = rng.random()
        chosen.append(int(np.searchsorted(np.cumsum(d2 / total), u).clip(0, n - 1)))
    return points[chosen].astype(float).copy()


def centroid_altitude(members_xy, centroid_xy, aperture_deg: float, z_min: float, z_max: float) -> float:
    """Minimal altitude at which the antenna cone covers the whole cluster.

    z = r_max / tan(aperture/2) with r_max the largest horizontal member
    distance, clamped into the operation-zone altitude band.
    """
    members_xy = np.asarray(members_xy, dtype=float).reshape(-1, 2)
    centroid_xy = np.asarray(centroid_xy, dtype=float)
    if members_xy.shape[0] == 0:
        r_max = 0.0
    else:
        r_max = float(np.sqrt(((members_xy - centroid_xy) ** 2).sum(axis=1)).max())
    z = r_max / math.tan(math.radians(aperture_deg) / 2.0)
    return min(max(z, z_min), z_max)


def assign_centroids(map_locs, centroids) -> ClusterAssignment:
    """One-to-one MAP/centroid matching minimizing the total 3D distance.

    Exact ties between optimal matchings are broken toward lower index
    pairs through an infinitesimal index penalty.
    """
    centroids = list(centroids)
    m, c = len(map_locs), len(centroids)
    cost = np.zeros((m, c))
    for i, loc in enumerate(map_locs):
        for j, target in enumerate(centroids):
            cost[i, j] = distance(loc, target)
    weight = np.arange(m)[:, None] * (c + 1) + np.arange(c)[None, :]
    tie_eps = 1e-9 * (1.0 + cost.max()) / (m * (c + 1) + c + 1)
    rows, cols = linear_sum_assignment(cost + tie_eps * weight)
    mapping = np.empty(m, dtype=int)
    mapping[rows] = cols
    return ClusterAssignment(centroids=centroids, map_to_centroid=mapping)


def compute_targets(
    state: NetworkState,
    aperture_deg: float,
    rng: np.random.Generator,
    init_xy: np.ndarray | None = None,
) -> ClusterAssignment:
    """Cluster users, lift centroids by the altitude rule, match to MAPs."""
    config = state.config
    ue_xy = state.ue_positions()[:, :2]
    centroids_xy, labels = kmeans(ue_xy, config.num_maps, rng, init=init_xy)
    locations = []
    for c in range(config.num_maps):
        members = ue_xy[labels == c]
        z = centroid_altitude(members, centroids_xy[c], aperture_deg, config.z_min_m, config.z_max_m)
        locations.append(Location3D(float(centroids_xy[c][0]), float(centroids_xy[c][1]), z))
    return assign_centroids([ap.loc for ap in state.maps], locations)


# ---------------------------------------------------------------------------
# Reward


def gompertz_delta(d_m: float, config: RewardConfig):
    """Smooth coverage gate 1 - a*exp(-exp(-b*(d - d0))), in (0.1, 1]."""
    inner = -config.gompertz_b * (np.asarray(d_m, dtype=float) - config.d0_m)
    inner = np.clip(inner, -700.0, 700.0)
    return 1.0 - config.gompertz_a * np.exp(-np.exp(inner))


def reward(
    agent: int,
    state: NetworkState,
    assignment: ClusterAssignment,
    sum_rate_bps: float,
    config: RewardConfig,
    r_avg_bps: float | None = None,
) -> float:
    """Hierarchical per-agent reward: coverage first, then sum-rate.

    r = (delta - 1) * d/d_max + delta * (R/r_avg - d0/d_max), with d the
    3D distance of the agent to its assigned centroid and delta the
    Gompertz gate. Both terms are normalized to be unitless.
    """
    target = assignment.target_of(agent)
    d = distance(state.maps[agent].loc, target)
    delta = float(gompertz_delta(d, config))
    r_avg = config.r_avg_bps if r_avg_bps is None else r_avg_bps
    rate_term = sum_rate_bps / r_avg - config.d0_m / config.d_max_m
    return (delta - 1.0) * (d / config.d_max_m) + delta * rate_term


# ---------------------------------------------------------------------------
# Returns, advantages, dual-clip loss


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G_t = sum_tau gamma^(tau-t) r_tau over one complete episode."""
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def returns_and_advantages(buffer: "TrajectoryBuffer", gamma: float):
    """Per-agent discounted returns and raw advantages (return - value).

    Advantage normalization happens once per update batch, not here.
    """
    returns, advantages = [], []
    for transitions in buffer.agents:
        r = np.array([t.reward for t in transitions])
        v = np.array([t.value for t in transitions])
        g = discounted_returns(r, gamma)
        returns.append(g)
        advantages.append(g - v)
    return returns, advantages


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def dual_clip_loss(log_prob_new, log_prob_old, advantage, eps1: float, eps2: float):
    """Per-sample dual-clip surrogate contribution (negated, lower is better).

    s = min(rho*A, clip(rho, 1-eps1, 1+eps1)*A); for A < 0 the surrogate
    is floored at (1+eps2)*A. Returns -s elementwise.
    """
    lp_new = np.asarray(log_prob_new, dtype=float)
    ratio = np.exp(lp_new - log_prob_old)
    adv = np.asarray(advantage, dtype=float)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps1, 1.0 + eps1) * adv
    s = np.minimum(s1, s2)
    s = np.where(adv < 0.0, np.maximum(s, (1.0 + eps2) * adv), s)
    return -s


def dual_clip_grad(log_prob_new, log_prob_old, advantage, eps1: float, eps2: float):
    """d(dual_clip_loss)/d(log_prob_new), elementwise."""
    lp_new = np.asarray(log_prob_new, dtype=float)
    adv = np.asarray(advantage, dtype=float)
    ratio = np.exp(lp_new - log_prob_old)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps1, 1.0 + eps1) * adv
    inside = (ratio > 1.0 - eps1) & (ratio < 1.0 + eps1)
    ds1 = ratio * adv  # through rho = exp(lp_new - lp_old)
    ds2 = np.where(inside, ratio * adv, 0.0)
    dmin = np.where(s1 <= s2, ds1, ds2)
    smin = np.minimum(s1, s2)
    floored = (adv < 0.0) & ((1.0 + eps2) * adv > smin)
    return -np.where(floored, 0.0, dmin)


# ---------------------------------------------------------------------------
# Rollout storage


@dataclass
class Transition:
    ue_msgs: MessageSet
    map_msgs: MessageSet
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool


class TrajectoryBuffer:
    """Per-agent rollout records consumed by one PPO update."""

    def __init__(self, num_agents: int):
        self.agents = [[] for _ in range(num_agents)]

    def add(self, agent: int, transition: Transition) -> None:
        self.agents[agent].append(transition)

    def __len__(self) -> int:
        return sum(len(a) for a in self.agents)


# ---------------------------------------------------------------------------
# PPO update


@dataclass(frozen=True)
class UpdateStats:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float


def _features(params: PolicyParams, samples) -> np.ndarray:
    n = params.width
    x = np.zeros((len(samples), 2 * n))
    for b, s in enumerate(samples):
        x[b, :n] = encode(params.enc_ue, s.ue_msgs)
        if params.enc_map is not None:
            x[b, n:] = encode(params.enc_map, s.map_msgs)
    return x


def ppo_update(
    params: PolicyParams,
    adam,
    buffer: TrajectoryBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """Minibatched dual-clip PPO epochs over one rollout buffer."""
    returns, advantages = returns_and_advantages(buffer, config.gamma)
    samples = [t for agent in buffer.agents for t in agent]
    g_all = np.concatenate(returns)
    adv_all = normalize_advantages(np.concatenate(advantages))
    lp_old = np.array([t.log_prob for t in samples])
    actions = np.array([t.action for t in samples], dtype=int)
    total = len(samples)

    n = params.width
    stats = []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(total)
        for lo in range(0, total, config.minibatch_size):
            idx = order[lo : lo + config.minibatch_size]
            batch = [samples[i] for i in idx]
            b = len(batch)
            x = _features(params, batch)
            probs, values, hidden = core_forward(params.core, x)
            safe = np.maximum(probs, 1e-300)
            lp_new = np.log(safe[np.arange(b), actions[idx]])
            entropy = -(safe * np.log(safe)).sum(axis=1)

            pol = dual_clip_loss(lp_new, lp_old[idx], adv_all[idx], config.eps1, config.eps2)
            verr = values - g_all[idx]
            loss = (
                pol.mean()
                + config.value_coef * (verr**2).mean()
                - config.entropy_coef * entropy.mean()
            )
            if not np.isfinite(loss):
                raise TrainingDiverged("non-finite PPO loss (policy %.3g, value %.3g)" % (pol.mean(), (verr**2).mean()))

            dlp = dual_clip_grad(lp_new, lp_old[idx], adv_all[idx], config.eps1, config.eps2) / b
            onehot = np.zeros((b, probs.shape[1]))
            onehot[np.arange(b), actions[idx]] = 1.0
            dlogits = dlp[:, None] * (onehot - probs)
            # Entropy bonus: dH/dlogits = -p (log p + H).
            dlogits += (config.entropy_coef / b) * probs * (np.log(safe) + entropy[:, None])
            dvalues = config.value_coef * 2.0 * verr / b

            grads, dx = core_backward(params.core, x, hidden, dlogits, dvalues)
            _accumulate_encoder_grads(params, batch, dx, grads)
            adam_step(adam, named_tensors(params), grads)
            stats.append((float(loss), float(pol.mean()), float((verr**2).mean()), float(entropy.mean())))

    arr = np.array(stats)
    return UpdateStats(
        loss=float(arr[:, 0].mean()),
        policy_loss=float(arr[:, 1].mean()),
        value_loss=float(arr[:, 2].mean()),
        entropy=float(arr[:, 3].mean()),
    )


def _accumulate_encoder_grads(params: PolicyParams, batch, dx: np.ndarray, grads: dict) -> None:
    n = params.width
    for prefix, enc in (("enc_ue", params.enc_ue), ("enc_map", params.enc_map)):
        if enc is None:
            continue
        for suffix in ("w_k", "w_v", "w_q"):
            grads["%s.%s" % (prefix, suffix)] = np.zeros((n, 3))
    for b, s in enumerate(batch):
        g_ue = encode_backward(params.enc_ue, s.ue_msgs, dx[b, :n])
        grads["enc_ue.w_k"] += g_ue.w_k
        grads["enc_ue.w_v"] += g_ue.w_v
        grads["enc_ue.w_q"] += g_ue.w_q
        if params.enc_map is not None:
            g_map = encode_backward(params.enc_map, s.map_msgs, dx[b, n:])
            grads["enc_map.w_k"] += g_map.w_k
            grads["enc_map.w_v"] += g_map.w_v
            grads["enc_map.w_q"] += g_map.w_q


# ---------------------------------------------------------------------------
# Training loop (clustered targets) and greedy evaluation


@dataclass
class TrainResult:
    params: PolicyParams
    reward_curve: np.ndarray  # (runs, num_maps) mean per-agent reward
    loss_curve: np.ndarray  # (runs,)
    entropy_curve: np.ndarray  # (runs,)
    sum_rate_curve: np.ndarray  # (runs,) mean episode sum-rate
    r_avg_bps: float  # final online normalizer


def _policy_outputs(params: PolicyParams, state: NetworkState, normalizer):
    """Per-agent (messages, probs, value) for the current state."""
    outs = []
    n = params.width
    for agent in range(len(state.maps)):
        ue_msgs, map_msgs = agent_messages(state, agent, normalizer)
        phi_ue = encode(params.enc_ue, ue_msgs)
        phi_map = encode(params.enc_map, map_msgs) if params.enc_map is not None else np.zeros(n)
        out = forward(params, StateRepresentation(phi_ue=phi_ue, phi_map=phi_map))
        outs.append((ue_msgs, map_msgs, out))
    return outs


def train(
    env_config: EnvConfig,
    channels: Channels,
    ppo_config: PpoConfig,
    reward_config: RewardConfig,
    runs: int,
    rng: np.random.Generator,
    encoder_width: int = 128,
    lr: float = 1e-4,
    with_map_branch: bool = True,
    params: PolicyParams | None = None,
) -> TrainResult:
    """Monte-Carlo training runs with per-step clustering targets.

    Each run deploys a fresh network, rolls out one episode with
    stochastic actions while recomputing the Kmeans targets every step
    (warm-started from the previous step), then performs one PPO update
    over the pooled agent transitions. Users stay static within a run;
    the sum-rate normalizer is the running mean over recent episodes.
    """
    if env_config.num_ues < 1:
        raise ValueError("training needs at least one user")
    if params is None:
        params = init_policy_params(encoder_width, rng, with_map_branch)
    adam = init_adam(named_tensors(params), lr=lr)
    normalizer = env_config.normalizer()
    aperture = channels.map.aperture_angle_deg
    m = env_config.num_maps

    rate_history: deque = deque(maxlen=reward_config.r_avg_window)
    reward_curve = np.zeros((runs, m))
    loss_curve = np.zeros(runs)
    entropy_curve = np.zeros(runs)
    sum_rate_curve = np.zeros(runs)

    for run in range(runs):
        state = reset(env_config, rng, channels)
        assignment = compute_targets(state, aperture, rng)
        r_avg = float(np.mean(rate_history)) if rate_history else reward_config.r_avg_bps
        buffer = TrajectoryBuffer(m)
        episode_rates = []

        for t in range(env_config.episode_len):
            outs = _policy_outputs(params, state, normalizer)
            actions, choices = [], []
            for ue_msgs, map_msgs, out in outs:
                idx, lp = sample_action(out.action_probs, rng)
                actions.append(Action(idx))
                choices.append((ue_msgs, map_msgs, idx, lp, out.value))
            step(state, actions, channels)
            warm = np.array([[c.x, c.y] for c in assignment.centroids])
            assignment = compute_targets(state, aperture, rng, init_xy=warm)
            rate = sum_rate(state, channels)
            episode_rates.append(rate)
            done = t == env_config.episode_len - 1
            for agent, (ue_msgs, map_msgs, idx, lp, value) in enumerate(choices):
                r = reward(agent, state, assignment, rate, reward_config, r_avg)
                buffer.add(
                    agent,
                    Transition(
                        ue_msgs=ue_msgs,
                        map_msgs=map_msgs,
                        action=idx,
                        log_prob=lp,
                        reward=r,
                        value=value,
                        done=done,
                    ),
                )

        for agent in range(m):
            reward_curve[run, agent] = float(
                np.mean([tr.reward for tr in buffer.agents[agent]])
            )
        sum_rate_curve[run] = float(np.mean(episode_rates))
        rate_history.append(sum_rate_curve[run])

        stats = ppo_update(params, adam, buffer, ppo_config, rng)
        loss_curve[run] = stats.loss
        entropy_curve[run] = stats.entropy

    r_avg = float(np.mean(rate_history)) if rate_history else reward_config.r_avg_bps
    return TrainResult(
        params=params,
        reward_curve=reward_curve,
        loss_curve=loss_curve,
        entropy_curve=entropy_curve,
        sum_rate_curve=sum_rate_curve,
        r_avg_bps=r_avg,
    )


@dataclass
class EvalResult:
    sum_rate_bps: np.ndarray  # (runs, horizon)
    load: np.ndarray  # (runs, horizon, num_maps)

    def mean_trace(self) -> np.ndarray:
        return self.sum_rate_bps.mean(axis=0)

    def mean_load_trace(self) -> np.ndarray:
        return self.load.mean(axis=0)

    def mean_sum_rate(self) -> float:
        return float(self.sum_rate_bps.mean())


def greedy_policy(params: PolicyParams, normalizer):
    """Policy factory: act by argmax of the learned distribution."""

    def factory():
        def act(state: NetworkState) -> list:
            outs = _policy_outputs(params, state, normalizer)
            return [Action(int(np.argmax(out.action_probs))) for _, _, out in outs]

        return act

    return factory


def evaluate_policy(
    policy_factory,
    env_config: EnvConfig,
    channels: Channels,
    runs: int,
    horizon: int,
    seed,
) -> EvalResult:
    """Roll out any per-step policy over independently seeded deployments.

    policy_factory() is called once per deployment and must return a
    callable state -> list of actions; per-deployment generators are
    spawned from the seed so results do not depend on execution order.
    """
    m = env_config.num_maps
    rates = np.zeros((runs, horizon))
    loads = np.zeros((runs, horizon, m))
    streams = np.random.SeedSequence(seed).spawn(runs)
    for run in range(runs):
        rng = np.random.default_rng(streams[run])
        state = reset(env_config, rng, channels)
        act = policy_factory()
        for t in range(horizon):
            step(state, act(state), channels)
            rates[run, t] = sum_rate(state, channels)
            loads[run, t] = network_load(state)
    return EvalResult(sum_rate_bps=rates, load=loads)


def evaluate(
    params: PolicyParams,
    env_config: EnvConfig,
    channels: Channels,
    runs: int,
    horizon: int,
    seed,
) -> EvalResult:
    """Greedy testing runs: no clustering, no rewards, messages only."""
    return evaluate_policy(
        greedy_policy(params, env_config.normalizer()),
        env_config,
        channels,
        runs,
        horizon,
        seed,
    )
