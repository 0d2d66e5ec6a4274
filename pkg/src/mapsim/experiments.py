"""Experiment configuration, orchestration, CSV reporting and checkpoints.

Every published result is a plain CSV with a schema comment on the first
line. File naming inside the output directory:

  policy_<name>.ckpt           trained weights (see checkpoint module)
  config_<command>.json        the science config actually used
  learning_curve_<name>.csv    run,agent_id,mean_reward,loss,entropy
  metrics_<name>.csv           per (step, deployment) records
  trace_mean_<name>.csv        per-step means across deployments
  bench_trace.csv / bench_bars.csv   comparison sweeps

The per-step state dump schema (positions, associations, rates) is
documented on state_dump_rows below.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import channel as ch
from .baselines import (
    BenchmarkConfig,
    centralized_policy_factory,
    random_policy_factory,
)
from .checkpoint import (
    CheckpointError,
    config_hash,
    load_checkpoint,
    policy_from_tensors,
    policy_to_tensors,
    save_checkpoint,
    verify_config_hash,
)
from .environment import MBS_ID, Channels, EnvConfig, link_budgets
from .training import (
    PpoConfig,
    RewardConfig,
    evaluate_policy,
    greedy_policy,
    train,
)

STATIC_UE = "static_ue"
MOVING_UE = "moving_ue"
SCENARIOS = (STATIC_UE, MOVING_UE)

DUAL_ATTENTION = "dual_attention"
SA_PPO = "sa_ppo"
CENTRALIZED = "centralized"
RANDOM = "random"
POLICIES = (DUAL_ATTENTION, SA_PPO, CENTRALIZED, RANDOM)
LEARNED_POLICIES = (DUAL_ATTENTION, SA_PPO)


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    map_channel: ch.ChannelParams = field(default_factory=ch.default_map_channel)
    mbs_channel: ch.ChannelParams = field(default_factory=ch.default_mbs_channel)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    bench: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    seed: int = 0
    num_deployments: int = 50
    scenario: str = STATIC_UE
    horizon: int = 300
    policy: str = DUAL_ATTENTION
    tau_c_values: list = field(default_factory=lambda: [10])
    out_dir: str = "results"
    encoder_width: int = 128
    lr: float = 1e-4
    training_runs: int = 2000
    # Users are static while training at paper scale; the smoke preset
    # turns mobility on to diversify the 200-run geometry budget.
    training_scenario: str = STATIC_UE
    bench_policies: list = field(default_factory=lambda: list(POLICIES))

    def channels(self) -> Channels:
        return Channels(map=self.map_channel, mbs=self.mbs_channel)

    def science_dict(self) -> dict:
        """Everything that affects results; excludes the output location."""
        d = config_to_dict(self)
        d.pop("out_dir", None)
        return d

    def hash(self) -> bytes:
        return config_hash(self.science_dict())


def default_config(**overrides) -> ExperimentConfig:
    """Paper-scale defaults: M=3, K=25, T_e=300, n=128, lr=1e-4, clips (0.01, 0.5).

    The full 10000-run training is reduced to 2000 runs by default.
    """
    return replace(ExperimentConfig(), **overrides) if overrides else ExperimentConfig()


def smoke_config(**overrides) -> ExperimentConfig:
    """Desk-scale preset: M=2, K=8, T_e=50, 200 runs.

    The paper-scale hyperparameters (tight 0.01 clip, lr 1e-4, n=128,
    altitude band up to 150 m) learn far too slowly for a 200-run budget,
    so this preset trades them for a standard 0.2 clip, lr 1e-3, a 32-wide
    encoder, full-batch epochs and a 60 m altitude cap. The initial
    sum-rate normalizer is calibrated to the measured random-policy level
    of this scale.
    """
    cfg = ExperimentConfig(
        env=EnvConfig(num_maps=2, num_ues=8, episode_len=50, z_max_m=60.0),
        ppo=PpoConfig(
            eps1=0.2,
            epochs_per_update=24,
            minibatch_size=100,
            entropy_coef=0.002,
        ),
        reward=RewardConfig(r_avg_bps=1.4e9),
        seed=3,
        training_scenario=MOVING_UE,
        num_deployments=12,
        horizon=50,
        encoder_width=32,
        lr=1e-3,
        training_runs=200,
        tau_c_values=[1, 200],
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# Config (de)serialization


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    nested = {
        "env": EnvConfig,
        "map_channel": ch.ChannelParams,
        "mbs_channel": ch.ChannelParams,
        "reward": RewardConfig,
        "ppo": PpoConfig,
        "bench": BenchmarkConfig,
    }
    kwargs = {}
    for key, cls in nested.items():
        if key in data:
            kwargs[key] = cls(**data.pop(key))
    kwargs.update(data)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(config: ExperimentConfig, path, science_only: bool = True) -> None:
    payload = config.science_dict() if science_only else config_to_dict(config)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, schema: str, fieldnames, rows) -> None:
    """CSV with a '# schema=...' comment line, deterministic formatting."""
    with open(path, "w", newline="") as fh:
        fh.write("# schema=%s\n" % schema)
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluation sample; exactly one record per (step, deployment)."""

    step: int
    deployment: int
    policy: str
    tau_c: int
    sum_rate_bps: float
    loads: tuple


def metrics_fieldnames(num_maps: int):
    return ["step", "deployment", "policy", "tau_c", "sum_rate_bps", "load_total"] + [
        "load_%d" % i for i in range(num_maps)
    ]


def metrics_rows(records):
    for r in records:
        row = {
            "step": r.step,
            "deployment": r.deployment,
            "policy": r.policy,
            "tau_c": r.tau_c,
            "sum_rate_bps": r.sum_rate_bps,
            "load_total": float(sum(r.loads)),
        }
        for i, load in enumerate(r.loads):
            row["load_%d" % i] = float(load)
        yield row


def records_from_eval(result, policy: str, tau_c: int):
    runs, horizon = result.sum_rate_bps.shape
    for run in range(runs):
        for t in range(horizon):
            yield MetricsRecord(
                step=t,
                deployment=run,
                policy=policy,
                tau_c=tau_c,
                sum_rate_bps=float(result.sum_rate_bps[run, t]),
                loads=tuple(float(x) for x in result.load[run, t]),
            )


def state_dump_rows(state, channels: Channels, rng=None):
    """Per-step state dump rows for plotting.

    Schema state_dump/v1: time, entity, id, x, y, z, serving_ap,
    demand_bps, rate_bps. MAP rows carry empty link fields; serving_ap is
    -1 for the macro station.
    """
    budgets = link_budgets(state, channels, rng)
    rows = []
    for ap in state.maps:
        rows.append(
            {
                "time": state.time,
                "entity": "map",
                "id": ap.id,
                "x": ap.loc.x,
                "y": ap.loc.y,
                "z": ap.loc.z,
                "serving_ap": "",
                "demand_bps": "",
                "rate_bps": "",
            }
        )
    for ue, budget in zip(state.ues, budgets):
        rows.append(
            {
                "time": state.time,
                "entity": "ue",
                "id": ue.id,
                "x": ue.loc.x,
                "y": ue.loc.y,
                "z": ue.loc.z,
                "serving_ap": ue.serving_ap,
                "demand_bps": ue.demand_bps,
                "rate_bps": budget.rate_bps,
            }
        )
    return rows


STATE_DUMP_FIELDS = [
    "time",
    "entity",
    "id",
    "x",
    "y",
    "z",
    "serving_ap",
    "demand_bps",
    "rate_bps",
]


# ---------------------------------------------------------------------------
# Commands


def scenario_env(config: ExperimentConfig, scenario: str | None = None) -> EnvConfig:
    """The environment with user mobility set by the given scenario."""
    scenario = config.scenario if scenario is None else scenario
    if scenario not in SCENARIOS:
        raise ValueError("unknown scenario %r" % scenario)
    speed = 0.0 if scenario == STATIC_UE else config.env.ue_speed_mps
    return replace(config.env, ue_speed_mps=speed)


def checkpoint_path(config: ExperimentConfig, policy: str | None = None) -> Path:
    return Path(config.out_dir) / ("policy_%s.ckpt" % (policy or config.policy))


def cmd_train(config: ExperimentConfig) -> int:
    """Train the selected learnable policy and persist checkpoint + curves.

    The training environment follows config.training_scenario (static by
    default, matching the protocol the full-scale defaults reproduce).
    """
    if config.policy not in LEARNED_POLICIES:
        print(
            "train: policy %r is not trainable; pick one of %s"
            % (config.policy, "/".join(LEARNED_POLICIES)),
            file=sys.stderr,
        )
        return 2
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = scenario_env(config, config.training_scenario)
    rng = np.random.default_rng(config.seed)
    result = train(
        env,
        config.channels(),
        config.ppo,
        config.reward,
        runs=config.training_runs,
        rng=rng,
        encoder_width=config.encoder_width,
        lr=config.lr,
        with_map_branch=config.policy == DUAL_ATTENTION,
    )

    save_checkpoint(checkpoint_path(config), policy_to_tensors(result.params), config.hash())
    save_config(config, out / "config_train.json")
    rows = []
    for run in range(result.reward_curve.shape[0]):
        for agent in range(result.reward_curve.shape[1]):
            rows.append(
                {
                    "run": run,
                    "agent_id": agent,
                    "mean_reward": float(result.reward_curve[run, agent]),
                    "loss": float(result.loss_curve[run]),
                    "entropy": float(result.entropy_curve[run]),
                }
            )
    write_csv(
        out / ("learning_curve_%s.csv" % config.policy),
        "learning_curve/v1",
        ["run", "agent_id", "mean_reward", "loss", "entropy"],
        rows,
    )
    return 0


def _policy_factory(config: ExperimentConfig, policy: str, tau_c: int, env: EnvConfig, ckpt=None):
    if policy in LEARNED_POLICIES:
        path = Path(ckpt) if ckpt else checkpoint_path(config, policy)
        tensors, loaded_hash = load_checkpoint(path)
        verify_config_hash(loaded_hash, config.hash(), str(path))
        params = policy_from_tensors(tensors)
        return greedy_policy(params, env.normalizer())
    if policy == CENTRALIZED:
        bench = replace(config.bench, tau_c=tau_c)
        return centralized_policy_factory(bench, env, config.channels())
    if policy == RANDOM:
        return random_policy_factory()
    raise ValueError("unknown policy %r" % policy)


def cmd_eval(config: ExperimentConfig, checkpoint=None) -> int:
    """Evaluate one policy over num_deployments independently seeded episodes."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = scenario_env(config)
    tau_c = config.bench.tau_c
    try:
        factory = _policy_factory(config, config.policy, tau_c, env, checkpoint)
    except FileNotFoundError as exc:
        print("eval: checkpoint not found: %s" % exc, file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print("eval: cannot load checkpoint: %s" % exc, file=sys.stderr)
        return 2

    result = evaluate_policy(
        factory,
        env,
        config.channels(),
        runs=config.num_deployments,
        horizon=config.horizon,
        seed=config.seed,
    )
    records = list(records_from_eval(result, config.policy, tau_c))
    write_csv(
        out / ("metrics_%s.csv" % config.policy),
        "metrics/v1",
        metrics_fieldnames(env.num_maps),
        metrics_rows(records),
    )
    if config.num_deployments > 1 and config.horizon > 0:
        mean_rows = [
            {
                "step": t,
                "policy": config.policy,
                "tau_c": tau_c,
                "sum_rate_bps_mean": float(result.sum_rate_bps[:, t].mean()),
                "load_total_mean": float(result.load[:, t].sum(axis=1).mean()),
            }
            for t in range(config.horizon)
        ]
        write_csv(
            out / ("trace_mean_%s.csv" % config.policy),
            "trace_mean/v1",
            ["step", "policy", "tau_c", "sum_rate_bps_mean", "load_total_mean"],
            mean_rows,
        )
    save_config(config, out / "config_eval.json")
    return 0


def cmd_bench(config: ExperimentConfig) -> int:
    """Sweep policies (x tau_c for the centralized one) on one scenario.

    Learned policies need their checkpoints in the output directory; a
    missing checkpoint skips that policy with a warning and the command
    exits nonzero. All combos share the per-deployment seeds, so traces
    are paired across policies.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = scenario_env(config)
    combos = []
    for policy in config.bench_policies:
        if policy == CENTRALIZED:
            combos.extend((policy, tau) for tau in config.tau_c_values)
        else:
            combos.append((policy, 0))

    failed = False
    trace_rows, bar_rows = [], []
    for policy, tau_c in combos:
        try:
            factory = _policy_factory(config, policy, max(tau_c, 1), env)
        except (FileNotFoundError, CheckpointError) as exc:
            print("bench: skipping %s (%s)" % (policy, exc), file=sys.stderr)
            failed = True
            continue
        result = evaluate_policy(
            factory,
            env,
            config.channels(),
            runs=config.num_deployments,
            horizon=config.horizon,
            seed=config.seed,
        )
        for t in range(config.horizon):
            trace_rows.append(
                {
                    "step": t,
                    "policy": policy,
                    "tau_c": tau_c,
                    "scenario": config.scenario,
                    "sum_rate_bps_mean": float(result.sum_rate_bps[:, t].mean()),
                    "load_total_mean": float(result.load[:, t].sum(axis=1).mean()),
                }
            )
        per_run = (
            result.sum_rate_bps.mean(axis=1) if config.horizon > 0 else np.zeros(0)
        )
        bar_rows.append(
            {
                "policy": policy,
                "tau_c": tau_c,
                "scenario": config.scenario,
                "mean_sum_rate_bps": float(per_run.mean()) if per_run.size else 0.0,
                "std_sum_rate_bps": float(per_run.std()) if per_run.size else 0.0,
            }
        )

    write_csv(
        out / "bench_trace.csv",
        "bench_trace/v1",
        ["step", "policy", "tau_c", "scenario", "sum_rate_bps_mean", "load_total_mean"],
        trace_rows,
    )
    write_csv(
        out / "bench_bars.csv",
        "bench_bars/v1",
        ["policy", "tau_c", "scenario", "mean_sum_rate_bps", "std_sum_rate_bps"],
        bar_rows,
    )
    save_config(config, out / "config_bench.json")
    return 1 if failed else 0
