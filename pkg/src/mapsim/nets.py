"""Minimal dense network stack: layers, actor-critic heads, sampling, Adam.

Everything is float64 numpy with hand-written backward passes, which keeps
the whole training path finite-difference testable. The policy maps the
concatenated dual embedding (length 2n) through one tanh trunk to a 7-way
action head and a scalar value head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import EncoderParams, StateRepresentation, init_encoder_params

NUM_ACTIONS = 7

ACT_TANH = "tanh"
ACT_IDENTITY = "identity"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = ACT_IDENTITY


@dataclass
class ActorCriticParams:
    trunk: DenseLayer  # 2n -> 2n, tanh
    actor_head: DenseLayer  # 2n -> 7, identity (softmax applied outside)
    critic_head: DenseLayer  # 2n -> 1, identity


@dataclass
class PolicyParams:
    """All learnable weights of one policy.

    enc_map is None for the single-attention variant, whose actor-critic
    input keeps the same 2n layout with the second half zeroed.
    """

    enc_ue: EncoderParams
    enc_map: EncoderParams | None
    core: ActorCriticParams
    width: int  # n


@dataclass(frozen=True)
class PolicyOutput:
    action_probs: np.ndarray  # (7,), sums to 1
    value: float


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step_count: int
    m: dict
    v: dict


def init_dense(out_dim: int, in_dim: int, rng: np.random.Generator, activation: str) -> DenseLayer:
    bound = 1.0 / np.sqrt(in_dim)
    return DenseLayer(
        weights=rng.uniform(-bound, bound, (out_dim, in_dim)),
        bias=np.zeros(out_dim),
        activation=activation,
    )


def init_policy_params(
    n: int, rng: np.random.Generator, with_map_branch: bool = True
) -> PolicyParams:
    enc_ue = init_encoder_params(n, rng)
    enc_map = init_encoder_params(n, rng) if with_map_branch else None
    core = ActorCriticParams(
        trunk=init_dense(2 * n, 2 * n, rng, ACT_TANH),
        actor_head=init_dense(NUM_ACTIONS, 2 * n, rng, ACT_IDENTITY),
        critic_head=init_dense(1, 2 * n, rng, ACT_IDENTITY),
    )
    return PolicyParams(enc_ue=enc_ue, enc_map=enc_map, core=core, width=n)


def named_tensors(params: PolicyParams) -> dict:
    """Live views of every learnable array, keyed by a stable name."""
    tensors = {
        "enc_ue.w_k": params.enc_ue.w_k,
        "enc_ue.w_v": params.enc_ue.w_v,
        "enc_ue.w_q": params.enc_ue.w_q,
    }
    if params.enc_map is not None:
        tensors.update(
            {
                "enc_map.w_k": params.enc_map.w_k,
                "enc_map.w_v": params.enc_map.w_v,
                "enc_map.w_q": params.enc_map.w_q,
            }
        )
    tensors.update(
        {
            "trunk.w": params.core.trunk.weights,
            "trunk.b": params.core.trunk.bias,
            "actor.w": params.core.actor_head.weights,
            "actor.b": params.core.actor_head.bias,
            "critic.w": params.core.critic_head.weights,
            "critic.b": params.core.critic_head.bias,
        }
    )
    return tensors


def param_count(params: PolicyParams) -> int:
    return sum(t.size for t in named_tensors(params).values())


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    z = x @ layer.weights.T + layer.bias
    if layer.activation == ACT_TANH:
        return np.tanh(z)
    return z


def core_forward(core: ActorCriticParams, x: np.ndarray):
    """Batch forward. x is (B, 2n); returns (probs (B,7), values (B,), hidden)."""
    hidden = dense_forward(core.trunk, x)
    logits = dense_forward(core.actor_head, hidden)
    values = dense_forward(core.critic_head, hidden)[:, 0]
    return softmax(logits, axis=-1), values, hidden


def forward(params: PolicyParams, state_rep: StateRepresentation) -> PolicyOutput:
    """Single-agent forward pass from the dual embedding."""
    x = np.concatenate([state_rep.phi_ue, state_rep.phi_map])[None, :]
    probs, values, _ = core_forward(params.core, x)
    return PolicyOutput(action_probs=probs[0], value=float(values[0]))


def core_backward(
    core: ActorCriticParams,
    x: np.ndarray,
    hidden: np.ndarray,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
):
    """Backward through heads and trunk.

    dlogits is dLoss/d(actor logits) (B, 7) and dvalues dLoss/d(value)
    (B,). Returns (grads dict, dLoss/dx (B, 2n)).
    """
    dvalues = dvalues[:, None]  # (B, 1)
    grads = {
        "actor.w": dlogits.T @ hidden,
        "actor.b": dlogits.sum(axis=0),
        "critic.w": dvalues.T @ hidden,
        "critic.b": dvalues.sum(axis=0),
    }
    dhidden = dlogits @ core.actor_head.weights + dvalues @ core.critic_head.weights
    dz = dhidden * (1.0 - hidden**2)  # tanh'
    grads["trunk.w"] = dz.T @ x
    grads["trunk.b"] = dz.sum(axis=0)
    dx = dz @ core.trunk.weights
    return grads, dx


def sample_action(probs: np.ndarray, rng: np.random.Generator, greedy: bool = False):
    """Categorical draw (or argmax in greedy evaluation mode).

    Returns (action index, log probability of the chosen action).
    """
    if greedy:
        idx = int(np.argmax(probs))
    else:
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(probs), u))
        idx = min(idx, len(probs) - 1)
    return idx, float(np.log(probs[idx]))


def init_adam(
    tensors: dict, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step_count=0,
        m={k: np.zeros_like(t) for k, t in tensors.items()},
        v={k: np.zeros_like(t) for k, t in tensors.items()},
    )


def adam_step(adam: AdamState, tensors: dict, grads: dict) -> None:
    """One Adam update, applied in place to the parameter arrays."""
    adam.step_count += 1
    t = adam.step_count
    bias1 = 1.0 - adam.beta1**t
    bias2 = 1.0 - adam.beta2**t
    for key, tensor in tensors.items():
        g = grads.get(key)
        if g is None:
            continue
        m = adam.m[key]
        v = adam.v[key]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        tensor -= adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
