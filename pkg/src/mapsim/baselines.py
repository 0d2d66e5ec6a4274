"""Benchmark policies: centralized Kmeans+Dijkstra planning, SA-PPO, random.

The centralized benchmark re-clusters users every tau_c steps, matches
centroids to MAPs, and plans each MAP's trajectory with Dijkstra on a 3D
lattice of spacing step_size_m over the operation zone. Between refreshes
it keeps following the stale cached path, which reproduces the outdated-
clustering effect the period tau_c controls.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .environment import Action, Channels, EnvConfig, NetworkState
from .geometry import Location3D
from .nets import PolicyParams, init_policy_params
from .training import compute_targets


@dataclass
class BenchmarkConfig:
    tau_c: int = 10  # clustering period in steps
    grid_resolution_m: float | None = None  # defaults to the env step size

    def __post_init__(self):
        if self.tau_c < 1:
            raise ValueError("tau_c must be >= 1")


class GridGraph:
    """3D lattice over the operation zone, spacing = the MAP step size.

    Nodes are integer index triples; edges connect 6-neighbors (one lattice
    step along an axis). The origin is anchored at the zone's minimum
    corner, so every node is a reachable MAP position.
    """

    # Fixed expansion order keeps planned paths deterministic.
    _NEIGHBOR_STEPS = (
        ((1, 0, 0), Action.RIGHT),
        ((-1, 0, 0), Action.LEFT),
        ((0, 1, 0), Action.FORWARD),
        ((0, -1, 0), Action.BACKWARD),
        ((0, 0, 1), Action.UP),
        ((0, 0, -1), Action.DOWN),
    )

    def __init__(self, config: EnvConfig, resolution_m: float | None = None):
        self.step = resolution_m if resolution_m is not None else config.step_size_m
        if self.step <= 0:
            raise ValueError("grid resolution must be > 0")
        self.origin = np.array([0.0, 0.0, config.z_min_m])
        extent = np.array(
            [config.area_x_m, config.area_y_m, config.z_max_m - config.z_min_m]
        )
        self.shape = tuple(int(np.floor(e / self.step + 1e-9)) + 1 for e in extent)

    def in_bounds(self, node) -> bool:
        return all(0 <= node[a] < self.shape[a] for a in range(3))

    def nearest_node(self, loc: Location3D) -> tuple:
        rel = (loc.as_array() - self.origin) / self.step
        return tuple(
            int(min(max(round(rel[a]), 0), self.shape[a] - 1)) for a in range(3)
        )

    def node_location(self, node) -> Location3D:
        xyz = self.origin + np.array(node, dtype=float) * self.step
        return Location3D(*xyz)

    def neighbors(self, node):
        for delta, action in self._NEIGHBOR_STEPS:
            other = (node[0] + delta[0], node[1] + delta[1], node[2] + delta[2])
            if self.in_bounds(other):
                yield other, action


def dijkstra_path(grid: GridGraph, start, goal):
    """Shortest lattice path as a list of actions (empty when start==goal).

    Uniform edge weights (the lattice spacing); terminates as soon as the
    goal is settled. Unreachable goals cannot occur on this grid.
    """
    if start == goal:
        return []
    dist = {start: 0.0}
    prev = {}
    counter = 0  # heap tie-break, keeps expansion deterministic
    heap = [(0.0, counter, start)]
    while heap:
        d, _, node = heapq.heappop(heap)
        if node == goal:
            break
        if d > dist.get(node, np.inf):
            continue
        for other, action in grid.neighbors(node):
            nd = d + grid.step
            if nd < dist.get(other, np.inf):
                dist[other] = nd
                prev[other] = (node, action)
                counter += 1
                heapq.heappush(heap, (nd, counter, other))
    actions = []
    node = goal
    while node != start:
        node, action = prev[node]
        actions.append(action)
    actions.reverse()
    return actions


def dijkstra_distance(grid: GridGraph, start, goal) -> float:
    return len(dijkstra_path(grid, start, goal)) * grid.step


class CentralizedPlanner:
    """Per-episode cache of the centralized benchmark (Kmeans + Dijkstra)."""

    def __init__(self, config: BenchmarkConfig, env_config: EnvConfig, channels: Channels):
        self.config = config
        self.grid = GridGraph(env_config, config.grid_resolution_m)
        self.aperture = channels.map.aperture_angle_deg
        self.queues = None
        self.centroids_xy = None

    def _refresh(self, state: NetworkState) -> None:
        warm = self.centroids_xy
        assignment = compute_targets(state, self.aperture, state.rng, init_xy=warm)
        self.centroids_xy = np.array([[c.x, c.y] for c in assignment.centroids])
        self.queues = []
        for agent, ap in enumerate(state.maps):
            start = self.grid.nearest_node(ap.loc)
            goal = self.grid.nearest_node(assignment.target_of(agent))
            self.queues.append(dijkstra_path(self.grid, start, goal))

    def act(self, state: NetworkState) -> list:
        if self.queues is None or state.time % self.config.tau_c == 0:
            self._refresh(state)
        actions = []
        for queue in self.queues:
            actions.append(queue.pop(0) if queue else Action.HOVER)
        return actions


def centralized_policy(state: NetworkState, config: BenchmarkConfig, cache: CentralizedPlanner) -> list:
    """One benchmark decision step; cache holds the per-episode planner."""
    assert cache.config.tau_c == config.tau_c
    return cache.act(state)


def centralized_policy_factory(config: BenchmarkConfig, env_config: EnvConfig, channels: Channels):
    """Factory for evaluate_policy: a fresh planner cache per deployment."""

    def factory():
        planner = CentralizedPlanner(config, env_config, channels)
        return planner.act

    return factory


def random_policy(state: NetworkState, rng: np.random.Generator | None = None) -> list:
    """Uniform action per MAP; the lower-bound baseline."""
    rng = rng or state.rng
    draws = rng.integers(0, len(Action), size=len(state.maps))
    return [Action(int(d)) for d in draws]


def random_policy_factory():
    def factory():
        return random_policy

    return factory


def sa_ppo_builder(n: int, rng: np.random.Generator) -> PolicyParams:
    """Single-attention ablation: the MAP message branch is absent.

    The actor-critic keeps the 2n input layout with the second half zeroed,
    so the variant trains and evaluates with the identical machinery.
    """
    return init_policy_params(n, rng, with_map_branch=False)
