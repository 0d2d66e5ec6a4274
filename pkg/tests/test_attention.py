import math

import numpy as np
import pytest

from mapsim.attention import (
    EmptyNeighborhoodError,
    EncoderParams,
    MessageSet,
    attention_weights,
    encode,
    encode_backward,
    init_encoder_params,
)


def random_messages(rng, n_neighbors, kind="ue"):
    return MessageSet(
        own_loc=rng.uniform(-1, 1, 3),
        neighbor_locs=rng.uniform(-1, 1, (n_neighbors, 3)),
        kind=kind,
    )


def reference_encode(params, messages):
    """Straight-line reimplementation with explicit loops."""
    own = np.asarray(messages.own_loc, dtype=float)
    neighbors = np.asarray(messages.neighbor_locs, dtype=float).reshape(-1, 3)
    n = params.w_k.shape[0]
    if len(neighbors) == 0:
        return np.zeros(n)
    keys, values = [], []
    for nb in neighbors:
        delta = own - nb
        keys.append(params.w_k @ delta)
        values.append(params.w_v @ delta)
    query = params.w_q @ own
    logits = [float(query @ k) / math.sqrt(n) for k in keys]
    peak = max(logits)
    weights = [math.exp(l - peak) for l in logits]
    total = sum(weights)
    phi = np.zeros(n)
    for w, v in zip(weights, values):
        phi += (w / total) * v
    return phi


class TestAttentionWeights:
    def test_single_key(self):
        w = attention_weights(np.array([1.0, 2.0]), np.array([[0.3, -0.1]]))
        assert w.shape == (1,)
        assert w[0] == 1.0

    def test_identical_keys(self):
        w = attention_weights(np.array([1.0, 2.0]), np.array([[0.3, -0.1], [0.3, -0.1]]))
        assert np.allclose(w, [0.5, 0.5])

    def test_scalar_softmax_oracle(self):
        # n=1 so logits are exactly (1, 0)
        w = attention_weights(np.array([1.0]), np.array([[1.0], [0.0]]))
        oracle = np.array([math.e / (math.e + 1.0), 1.0 / (math.e + 1.0)])
        assert np.allclose(w, oracle, rtol=1e-12)

    def test_normalized(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            q = rng.normal(size=8)
            keys = rng.normal(size=(rng.integers(1, 12), 8))
            w = attention_weights(q, keys)
            assert abs(w.sum() - 1.0) < 1e-9
            if len(keys) >= 2:
                assert np.all(w > 0) and np.all(w < 1)

    def test_empty_raises(self):
        with pytest.raises(EmptyNeighborhoodError):
            attention_weights(np.array([1.0]), np.zeros((0, 1)))

    def test_logit_scaling_matches_softmax(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=4)
        keys = rng.normal(size=(6, 4))
        w1 = attention_weights(q, keys)
        w2 = attention_weights(3.0 * q, keys)
        logits = keys @ q / 2.0  # sqrt(n) = 2
        scaled = np.exp(3.0 * logits - np.max(3.0 * logits))
        assert np.allclose(w2, scaled / scaled.sum(), rtol=1e-12)
        assert not np.allclose(w1, w2)


class TestEncode:
    def test_neighbors_at_own_location(self):
        rng = np.random.default_rng(0)
        params = init_encoder_params(6, rng)
        own = rng.uniform(-1, 1, 3)
        msgs = MessageSet(own_loc=own, neighbor_locs=np.tile(own, (4, 1)))
        assert np.allclose(encode(params, msgs), 0.0)

    def test_single_neighbor(self):
        rng = np.random.default_rng(1)
        params = init_encoder_params(5, rng)
        msgs = random_messages(rng, 1)
        expected = params.w_v @ (msgs.own_loc - msgs.neighbor_locs[0])
        assert np.allclose(encode(params, msgs), expected, rtol=1e-12)

    def test_against_reference_implementation(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            params = init_encoder_params(int(rng.integers(2, 16)), rng)
            msgs = random_messages(rng, int(rng.integers(1, 10)))
            assert np.allclose(encode(params, msgs), reference_encode(params, msgs), atol=1e-10)

    def test_empty_neighborhood(self):
        rng = np.random.default_rng(3)
        params = init_encoder_params(7, rng)
        msgs = MessageSet(own_loc=np.zeros(3), neighbor_locs=np.zeros((0, 3)))
        phi = encode(params, msgs)
        assert phi.shape == (7,)
        assert np.all(phi == 0.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        params = init_encoder_params(8, rng)
        for _ in range(50):
            msgs = random_messages(rng, int(rng.integers(2, 12)))
            phi = encode(params, msgs)
            perm = rng.permutation(len(msgs.neighbor_locs))
            shuffled = MessageSet(own_loc=msgs.own_loc, neighbor_locs=msgs.neighbor_locs[perm])
            assert np.max(np.abs(encode(params, shuffled) - phi)) < 1e-12

    def test_size_invariance(self):
        rng = np.random.default_rng(5)
        params = init_encoder_params(9, rng)
        for m in range(0, 16):
            msgs = random_messages(rng, m)
            assert encode(params, msgs).shape == (9,)


class TestEncodeBackward:
    def finite_difference(self, params, msgs, upstream, h=1e-5):
        grads = {}
        for name in ("w_k", "w_v", "w_q"):
            mat = getattr(params, name)
            grad = np.zeros_like(mat)
            for idx in np.ndindex(mat.shape):
                orig = mat[idx]
                mat[idx] = orig + h
                hi = float(upstream @ encode(params, msgs))
                mat[idx] = orig - h
                lo = float(upstream @ encode(params, msgs))
                mat[idx] = orig
                grad[idx] = (hi - lo) / (2 * h)
            grads[name] = grad
        return grads

    def test_zero_upstream(self):
        rng = np.random.default_rng(6)
        params = init_encoder_params(4, rng)
        msgs = random_messages(rng, 5)
        g = encode_backward(params, msgs, np.zeros(4))
        for name in ("w_k", "w_v", "w_q"):
            assert np.all(getattr(g, name) == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            params = init_encoder_params(int(rng.integers(2, 8)), rng)
            msgs = random_messages(rng, int(rng.integers(1, 8)))
            upstream = rng.normal(size=params.width)
            got = encode_backward(params, msgs, upstream)
            want = self.finite_difference(params, msgs, upstream)
            for name in ("w_k", "w_v", "w_q"):
                a, b = getattr(got, name), want[name]
                denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
                assert np.max(np.abs(a - b) / denom) < 1e-4

    def test_empty_neighborhood_zero_grads(self):
        rng = np.random.default_rng(8)
        params = init_encoder_params(4, rng)
        msgs = MessageSet(own_loc=rng.uniform(-1, 1, 3), neighbor_locs=np.zeros((0, 3)))
        g = encode_backward(params, msgs, rng.normal(size=4))
        for name in ("w_k", "w_v", "w_q"):
            assert np.all(getattr(g, name) == 0.0)
