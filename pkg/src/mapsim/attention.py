"""Attention message encoder: per-class key/value/query projections and gradients.

Each agent turns the relative positions of its neighbors (one branch for
users, one for other access points) into a fixed-size embedding through
scaled dot-product attention. The embedding size does not depend on the
neighborhood size and the aggregation is invariant to neighbor order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UE_BRANCH = "ue"
MAP_BRANCH = "map"


class EmptyNeighborhoodError(ValueError):
    """Raised by attention_weights when there is no key to attend to."""


@dataclass
class EncoderParams:
    """Learnable projections, each of shape (n, 3)."""

    w_k: np.ndarray
    w_v: np.ndarray
    w_q: np.ndarray

    @property
    def width(self) -> int:
        return self.w_k.shape[0]


@dataclass(frozen=True)
class MessageSet:
    """One agent's view of its neighborhood, in normalized coordinates.

    own_loc has shape (3,), neighbor_locs (m, 3) with m possibly 0. The
    neighbor order carries no meaning.
    """

    own_loc: np.ndarray
    neighbor_locs: np.ndarray
    kind: str = UE_BRANCH


@dataclass(frozen=True)
class StateRepresentation:
    """The dual embedding fed to the actor-critic, each vector length n."""

    phi_ue: np.ndarray
    phi_map: np.ndarray


def init_encoder_params(n: int, rng: np.random.Generator) -> EncoderParams:
    # Uniform in [-1/sqrt(3), 1/sqrt(3)]: fan-in of the 3D position input.
    bound = 1.0 / np.sqrt(3.0)
    shape = (n, 3)
    return EncoderParams(
        w_k=rng.uniform(-bound, bound, shape),
        w_v=rng.uniform(-bound, bound, shape),
        w_q=rng.uniform(-bound, bound, shape),
    )


def attention_weights(query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Softmax over q.k_p / sqrt(n), computed with max-subtraction."""
    keys = np.atleast_2d(np.asarray(keys, dtype=float))
    if keys.shape[0] == 0:
        raise EmptyNeighborhoodError("no keys to attend to")
    n = query.shape[0]
    logits = keys @ query / np.sqrt(n)
    logits = logits - logits.max()
    exp = np.exp(logits)
    return exp / exp.sum()


def encode(params: EncoderParams, messages: MessageSet) -> np.ndarray:
    """Aggregate neighbor values into the fixed-size embedding.

    k_j = w_k (own - neighbor_j), v_j = w_v (own - neighbor_j),
    q = w_q own; the output is sum_j softmax_j(q.k/sqrt(n)) v_j. An empty
    neighborhood encodes to the zero vector.
    """
    own = np.asarray(messages.own_loc, dtype=float)
    neighbors = np.asarray(messages.neighbor_locs, dtype=float).reshape(-1, 3)
    if neighbors.shape[0] == 0:
        return np.zeros(params.width)
    deltas = own[None, :] - neighbors  # (m, 3)
    keys = deltas @ params.w_k.T  # (m, n)
    values = deltas @ params.w_v.T  # (m, n)
    query = params.w_q @ own  # (n,)
    weights = attention_weights(query, keys)
    return weights @ values


def encode_backward(
    params: EncoderParams, messages: MessageSet, upstream_grad: np.ndarray
) -> EncoderParams:
    """Exact gradients of the embedding wrt w_k, w_v, w_q.

    Returns an EncoderParams holding the gradient arrays, chain-ruled
    with upstream_grad (dLoss/dphi).
    """
    own = np.asarray(messages.own_loc, dtype=float)
    neighbors = np.asarray(messages.neighbor_locs, dtype=float).reshape(-1, 3)
    zeros = lambda: np.zeros_like(params.w_k)
    if neighbors.shape[0] == 0:
        return EncoderParams(w_k=zeros(), w_v=zeros(), w_q=zeros())

    n = params.width
    deltas = own[None, :] - neighbors
    keys = deltas @ params.w_k.T
    values = deltas @ params.w_v.T
    query = params.w_q @ own
    weights = attention_weights(query, keys)

    g = np.asarray(upstream_grad, dtype=float)
    # phi = sum_j a_j v_j with v_j = w_v delta_j.
    grad_w_v = np.outer(g, weights @ deltas)
    # Through the softmax: dL/dlogit_j = a_j (g.v_j - sum_p a_p g.v_p).
    value_scores = values @ g  # (m,)
    dlogits = weights * (value_scores - weights @ value_scores)
    # logit_j = q.k_j / sqrt(n).
    dquery = (dlogits @ keys) / np.sqrt(n)
    dkeys = np.outer(dlogits, query) / np.sqrt(n)  # (m, n)
    grad_w_q = np.outer(dquery, own)
    grad_w_k = dkeys.T @ deltas
    return EncoderParams(w_k=grad_w_k, w_v=grad_w_v, w_q=grad_w_q)
