import math

import numpy as np
import pytest

from mapsim.attention import StateRepresentation
from mapsim.nets import (
    NUM_ACTIONS,
    AdamState,
    adam_step,
    core_backward,
    core_forward,
    forward,
    init_adam,
    init_policy_params,
    named_tensors,
    param_count,
    sample_action,
    softmax,
)


def zeroed_params(n, rng):
    params = init_policy_params(n, rng)
    for arr in named_tensors(params).values():
        arr[:] = 0.0
    return params


class TestForward:
    def test_zero_everything_gives_uniform(self):
        params = zeroed_params(4, np.random.default_rng(0))
        out = forward(params, StateRepresentation(np.zeros(4), np.zeros(4)))
        assert np.allclose(out.action_probs, 1.0 / NUM_ACTIONS)
        assert out.value == 0.0

    def test_softmax_of_unit_logit(self):
        params = zeroed_params(4, np.random.default_rng(0))
        params.core.actor_head.bias[0] = 1.0
        out = forward(params, StateRepresentation(np.zeros(4), np.zeros(4)))
        assert out.action_probs[0] == pytest.approx(math.e / (math.e + 6.0), rel=1e-12)

    def test_finite_for_wild_inputs(self):
        rng = np.random.default_rng(1)
        params = init_policy_params(8, rng)
        for _ in range(50):
            rep = StateRepresentation(rng.uniform(-10, 10, 8), rng.uniform(-10, 10, 8))
            out = forward(params, rep)
            assert np.all(np.isfinite(out.action_probs))
            assert math.isfinite(out.value)
            assert out.action_probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        params = init_policy_params(6, rng)
        rep = StateRepresentation(rng.normal(size=6), rng.normal(size=6))
        a = forward(params, rep)
        b = forward(params, rep)
        assert np.array_equal(a.action_probs, b.action_probs)
        assert a.value == b.value


class TestSoftmax:
    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        z = rng.normal(scale=100.0, size=(200, 7))
        p = softmax(z, axis=-1)
        assert np.max(np.abs(p.sum(axis=-1) - 1.0)) < 1e-9

    def test_survives_huge_logits(self):
        p = softmax(np.array([1e4, -1e4, 0.0]))
        assert np.all(np.isfinite(p))
        assert p.sum() == pytest.approx(1.0, abs=1e-9)


class TestSampleAction:
    def test_one_hot(self):
        probs = np.zeros(NUM_ACTIONS)
        probs[3] = 1.0
        idx, lp = sample_action(probs, np.random.default_rng(0))
        assert idx == 3
        assert lp == 0.0

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(4)
        probs = np.full(NUM_ACTIONS, 1.0 / NUM_ACTIONS)
        counts = np.zeros(NUM_ACTIONS)
        draws = 100_000
        for _ in range(draws):
            idx, _ = sample_action(probs, rng)
            counts[idx] += 1
        assert np.max(np.abs(counts / draws - 1.0 / NUM_ACTIONS)) < 0.01

    def test_greedy_mode(self):
        probs = np.array([0.1, 0.5, 0.05, 0.1, 0.1, 0.1, 0.05])
        for seed in range(5):
            idx, lp = sample_action(probs, np.random.default_rng(seed), greedy=True)
            assert idx == 1
            assert lp == pytest.approx(math.log(0.5))


class TestBackward:
    def loss_and_grads(self, params, x, target_logit_weights, value_weight):
        probs, values, hidden = core_forward(params.core, x)
        logits_grad = np.zeros_like(probs)
        # loss = sum(w . log p) + value_weight * sum(v): logit grad via log-softmax
        for b in range(x.shape[0]):
            logits_grad[b] = target_logit_weights[b] - probs[b] * target_logit_weights[b].sum()
        grads, dx = core_backward(
            params.core, x, hidden, logits_grad, np.full(x.shape[0], value_weight)
        )
        loss = float((target_logit_weights * np.log(probs)).sum() + value_weight * values.sum())
        return loss, grads, dx

    def test_zero_output_grads(self):
        rng = np.random.default_rng(5)
        params = init_policy_params(4, rng)
        x = rng.normal(size=(3, 8))
        _, _, hidden = core_forward(params.core, x)
        grads, dx = core_backward(params.core, x, hidden, np.zeros((3, 7)), np.zeros(3))
        assert all(np.all(g == 0.0) for g in grads.values())
        assert np.all(dx == 0.0)

    def test_log_softmax_gradient_closed_form(self):
        # d log p_a / d logits = onehot(a) - probs, checked by finite differences
        rng = np.random.default_rng(6)
        logits = rng.normal(size=7)
        a = 2
        h = 1e-6
        p = softmax(logits)
        grad = np.eye(7)[a] - p
        for k in range(7):
            bumped = logits.copy()
            bumped[k] += h
            hi = math.log(softmax(bumped)[a])
            bumped[k] -= 2 * h
            lo = math.log(softmax(bumped)[a])
            assert (hi - lo) / (2 * h) == pytest.approx(grad[k], abs=1e-6)

    def test_core_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        params = init_policy_params(3, rng)
        x = rng.normal(size=(4, 6))
        w = rng.normal(size=(4, 7))
        _, grads, _ = self.loss_and_grads(params, x, w, value_weight=0.7)
        tensors = named_tensors(params)
        h = 1e-5
        for name in ("trunk.w", "trunk.b", "actor.w", "actor.b", "critic.w", "critic.b"):
            arr = tensors[name]
            flat_indices = [np.unravel_index(i, arr.shape) for i in range(arr.size)]
            for idx in flat_indices:
                orig = arr[idx]
                arr[idx] = orig + h
                hi, _, _ = self.loss_and_grads(params, x, w, 0.7)
                arr[idx] = orig - h
                lo, _, _ = self.loss_and_grads(params, x, w, 0.7)
                arr[idx] = orig
                fd = (hi - lo) / (2 * h)
                got = grads[name][idx]
                denom = max(abs(fd), abs(got), 1e-6)
                assert abs(fd - got) / denom < 1e-4


class TestAdam:
    def test_zero_grads_no_change(self):
        rng = np.random.default_rng(8)
        params = init_policy_params(3, rng)
        tensors = named_tensors(params)
        before = {k: v.copy() for k, v in tensors.items()}
        adam = init_adam(tensors, lr=1e-3)
        adam_step(adam, tensors, {k: np.zeros_like(v) for k, v in tensors.items()})
        for k in tensors:
            assert np.array_equal(tensors[k], before[k])

    def test_first_step_is_signed_lr(self):
        tensors = {"w": np.array([1.0, -2.0, 3.0])}
        adam = init_adam(tensors, lr=1e-2)
        grads = {"w": np.array([0.5, -0.25, 1e-3])}
        adam_step(adam, tensors, grads)
        moved = np.array([1.0, -2.0, 3.0]) - tensors["w"]
        # bias-corrected first step is lr * g / (|g| + eps) ~= lr * sign(g)
        assert np.allclose(moved, 1e-2 * np.sign(grads["w"]), rtol=1e-4)

    def test_descends_quadratic(self):
        tensors = {"x": np.array([1.0])}
        adam = init_adam(tensors, lr=0.01)
        trace = [abs(tensors["x"][0])]
        for _ in range(50):
            adam_step(adam, tensors, {"x": 2.0 * tensors["x"]})
            trace.append(abs(tensors["x"][0]))
        assert all(b < a for a, b in zip(trace, trace[1:]))
        assert trace[-1] < trace[0] / 2

    def test_zero_lr_freezes_params(self):
        tensors = {"w": np.array([[1.0, 2.0]])}
        adam = init_adam(tensors, lr=0.0)
        adam_step(adam, tensors, {"w": np.array([[5.0, -3.0]])})
        assert np.array_equal(tensors["w"], np.array([[1.0, 2.0]]))


class TestParameterCounting:
    def test_map_branch_size_difference(self):
        rng = np.random.default_rng(9)
        n = 16
        full = init_policy_params(n, rng)
        single = init_policy_params(n, rng, with_map_branch=False)
        assert param_count(full) - param_count(single) == 3 * n * 3

    def test_shared_params_are_views(self):
        rng = np.random.default_rng(10)
        params = init_policy_params(4, rng)
        named_tensors(params)["trunk.b"][0] = 42.0
        assert params.core.trunk.bias[0] == 42.0
