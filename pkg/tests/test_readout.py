import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurohockey.readout import (
    DivergenceError,
    ReadoutConfig,
    ReadoutState,
    eq1_double_sum,
    load_weights_csv,
    policy_forward,
    save_weights_csv,
    softmax,
)


def synthetic_episode(rng, T, n):
    """Random probabilities, actions, traces and rewards for one episode."""
    logits = rng.normal(size=(T, 2))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    actions = rng.integers(0, 2, size=T)
    traces = rng.exponential(2.0, size=(T, n))
    rewards = rng.normal(size=T)
    return probs, actions, traces, rewards


def incremental(probs, actions, traces, rewards, alpha, gamma):
    st_ = ReadoutState(traces.shape[1], ReadoutConfig(alpha, gamma))
    st_.start_episode()
    for p, a, s, r in zip(probs, actions, traces, rewards):
        st_.accumulate_step(p, int(a), s, float(r))
    return st_.pending


def surrogate(W, traces, actions, rewards, gamma):
    """sum_t r_t sum_{t'<=t} gamma^(t-t') log pi_{a_t'}(W s_t')."""
    a = traces @ W.T
    logp = a - np.log(np.exp(a - a.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True)) - a.max(axis=1, keepdims=True)
    chosen = logp[np.arange(len(actions)), actions]
    total = 0.0
    for t in range(len(rewards)):
        for tp in range(t + 1):
            total += rewards[t] * gamma ** (t - tp) * chosen[tp]
    return total


class StubRng:
    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


# -- policy_forward ------------------------------------------------------------

def test_zero_weights_uniform():
    s = policy_forward(np.zeros((2, 5)), np.arange(5.0), np.random.default_rng(0))
    assert s.probs.tolist() == [0.5, 0.5]


def test_log3_gap():
    for c in (-3.0, 0.0, 7.5):
        p = softmax(np.array([c, c + math.log(3)]))
        assert p == pytest.approx([0.25, 0.75], abs=1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(a0, a1, c):
    p = softmax(np.array([a0, a1]))
    q = softmax(np.array([a0 + c, a1 + c]))
    assert q == pytest.approx(p, abs=1e-12)
    assert p.sum() == pytest.approx(1.0) and np.all(p > 0)


def test_sampling_follows_probabilities():
    W = np.array([[0.0], [math.log(3)]])  # pi = [0.25, 0.75]
    assert policy_forward(W, np.array([1.0]), StubRng(0.2)).action == 0
    assert policy_forward(W, np.array([1.0]), StubRng(0.3)).action == 1
    rng = np.random.default_rng(0)
    n1 = sum(policy_forward(W, np.array([1.0]), rng).action for _ in range(4000))
    assert abs(n1 / 4000 - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 4000)


def test_non_finite_activation_faults():
    with pytest.raises(DivergenceError):
        policy_forward(np.full((2, 2), np.inf), np.ones(2), np.random.default_rng(0))


# -- accumulate / apply ------------------------------------------------------

def test_single_step_matches_hand_value():
    s_bar = np.array([2.0, 0.5, 0.0])
    probs = np.array([0.3, 0.7])
    pend = incremental(probs[None], np.array([1]), s_bar[None], np.array([1.0]), 1.0, 0.99)
    expected = -np.outer(probs - np.array([0.0, 1.0]), s_bar)
    assert pend == pytest.approx(expected, abs=1e-15)


def test_zero_reward_no_update():
    rng = np.random.default_rng(1)
    probs, actions, traces, _ = synthetic_episode(rng, 12, 4)
    assert np.all(incremental(probs, actions, traces, np.zeros(12), 0.1, 0.9) == 0.0)


def test_incremental_equals_double_sum_small():
    rng = np.random.default_rng(2)
    probs, actions, traces, rewards = synthetic_episode(rng, 10, 5)
    inc = incremental(probs, actions, traces, rewards, 0.01, 0.95)
    ref = eq1_double_sum(probs, actions, traces, rewards, 0.01, 0.95)
    assert np.max(np.abs(inc - ref)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 50), n=st.integers(1, 20), seed=st.integers(0, 2**32 - 1),
       gamma=st.floats(0.5, 1.0))
def test_incremental_equals_double_sum_property(T, n, seed, gamma):
    rng = np.random.default_rng(seed)
    probs, actions, traces, rewards = synthetic_episode(rng, T, n)
    inc = incremental(probs, actions, traces, rewards, 0.05, gamma)
    ref = eq1_double_sum(probs, actions, traces, rewards, 0.05, gamma)
    assert np.max(np.abs(inc - ref)) <= 1e-10


def test_gradient_identity_finite_differences():
    rng = np.random.default_rng(3)
    T, n, alpha, gamma, h = 15, 4, 0.3, 0.9, 1e-6
    W = rng.normal(scale=0.3, size=(2, n))
    traces = rng.exponential(1.0, size=(T, n))
    actions = rng.integers(0, 2, size=T)
    rewards = rng.normal(size=T)
    probs = np.array([softmax(W @ s) for s in traces])
    pend = incremental(probs, actions, traces, rewards, alpha, gamma)
    grad = np.zeros_like(W)
    for k in range(2):
        for i in range(n):
            Wp, Wm = W.copy(), W.copy()
            Wp[k, i] += h
            Wm[k, i] -= h
            grad[k, i] = (surrogate(Wp, traces, actions, rewards, gamma)
                          - surrogate(Wm, traces, actions, rewards, gamma)) / (2 * h)
    assert np.linalg.norm(pend - alpha * grad) <= 1e-5 * np.linalg.norm(alpha * grad)


def test_apply_update_semantics():
    rng = np.random.default_rng(4)
    st_ = ReadoutState(6, ReadoutConfig(0.1, 0.9))
    st_.apply_update()
    assert np.all(st_.W == 0.0)  # empty pending: identity
    parts = []
    for _ in range(2):
        probs, actions, traces, rewards = synthetic_episode(rng, 8, 6)
        st_.start_episode()
        for p, a, s, r in zip(probs, actions, traces, rewards):
            st_.accumulate_step(p, int(a), s, float(r))
        parts.append(eq1_double_sum(probs, actions, traces, rewards, 0.1, 0.9))
    st_.apply_update()
    assert st_.W == pytest.approx(parts[0] + parts[1], abs=1e-12)
    W1 = st_.W.copy()
    st_.apply_update()
    assert np.array_equal(W1, st_.W)
    assert st_.n_applied == 3


def test_episode_isolation():
    rng = np.random.default_rng(5)
    ep1 = synthetic_episode(rng, 9, 3)
    ep2 = synthetic_episode(rng, 7, 3)
    st_ = ReadoutState(3, ReadoutConfig(0.2, 0.95))
    for ep in (ep1, ep2):
        st_.start_episode()
        for p, a, s, r in zip(*ep):
            st_.accumulate_step(p, int(a), s, float(r))
    alone = incremental(*ep1, 0.2, 0.95) + incremental(*ep2, 0.2, 0.95)
    assert st_.pending == pytest.approx(alone, abs=1e-12)


def test_divergent_update_faults():
    st_ = ReadoutState(2)
    st_.pending[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        st_.apply_update()


def test_weight_csv_round_trip(tmp_path):
    W = np.random.default_rng(6).normal(size=(2, 7))
    save_weights_csv(W, tmp_path / "w.csv")
    assert np.array_equal(load_weights_csv(tmp_path / "w.csv", 7), W)
    with pytest.raises(ValueError):
        load_weights_csv(tmp_path / "w.csv", 8)
