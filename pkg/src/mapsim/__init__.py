"""Simulator and multi-agent PPO trainer for mobile access point trajectories."""

from .attention import EncoderParams, MessageSet, StateRepresentation, attention_weights, encode
from .channel import ChannelParams, LinkBudget, LinkClass, default_map_channel, default_mbs_channel
from .environment import (
    Action,
    Channels,
    EnvConfig,
    NetworkState,
    associate,
    default_channels,
    network_load,
    neighborhood,
    reset,
    step,
    sum_rate,
)
from .geometry import Location3D
from .nets import PolicyParams, PolicyOutput, forward, sample_action
from .training import (
    PpoConfig,
    RewardConfig,
    TrajectoryBuffer,
    evaluate,
    evaluate_policy,
    gompertz_delta,
    reward,
    train,
)
from .baselines import BenchmarkConfig, CentralizedPlanner, random_policy, sa_ppo_builder

__version__ = "0.1.0"
