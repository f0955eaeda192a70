"""Softmax readout over filtered reservoir traces, trained by reward-modulated eligibility."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

N_ACTIONS = 2


class DivergenceError(FloatingPointError):
    """Readout weights or activations became non-finite."""


@dataclass(frozen=True)
class ReadoutConfig:
    alpha: float = 1e-5
    gamma: float = 0.95

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha={self.alpha} must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma={self.gamma} must be in (0, 1]")


@dataclass(frozen=True)
class PolicySample:
    activations: np.ndarray
    probs: np.ndarray
    action: int


def softmax(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - np.max(a))
    return z / z.sum()


def policy_forward(W: np.ndarray, s_bar: np.ndarray, rng) -> PolicySample:
    """Linear activations, softmax probabilities and one sampled action.

    Exactly one uniform draw is consumed from ``rng`` per call.
    """
    a = W @ s_bar
    if not np.all(np.isfinite(a)):
        raise DivergenceError(
            f"non-finite readout activation {a}; max|W|={np.max(np.abs(W)):.3g}, "
            f"max s_bar={np.max(s_bar):.3g}"
        )
    pi = softmax(a)
    u = float(rng.random())
    action = int(u >= pi[0])
    return PolicySample(a, pi, action)


@dataclass
class ReadoutState:
    """Plastic hidden-to-readout weights plus per-episode eligibility.

    ``E`` carries discounted ``(pi - onehot) * s_bar`` within an episode and
    ``pending`` sums ``-alpha * r_t * E_t`` until the next weight application.
    """

    n_hidden: int
    config: ReadoutConfig = field(default_factory=ReadoutConfig)
    W: np.ndarray = None
    E: np.ndarray = field(init=False)
    pending: np.ndarray = field(init=False)
    n_applied: int = field(default=0, init=False)

    def __post_init__(self):
        self.config.validate()
        shape = (N_ACTIONS, self.n_hidden)
        self.W = np.zeros(shape) if self.W is None else np.array(self.W, dtype=float)
        if self.W.shape != shape:
            raise ValueError(f"W must have shape {shape}, got {self.W.shape}")
        self.E = np.zeros(shape)
        self.pending = np.zeros(shape)

    def start_episode(self) -> None:
        self.E[:] = 0.0

    def accumulate_step(self, probs, action: int, s_bar, reward: float) -> None:
        onehot = np.zeros(N_ACTIONS)
        onehot[action] = 1.0
        self.E *= self.config.gamma
        self.E += np.outer(np.asarray(probs) - onehot, s_bar)
        if reward != 0.0:
            self.pending -= (self.config.alpha * reward) * self.E

    def apply_update(self) -> None:
        W = self.W + self.pending
        if not np.all(np.isfinite(W)):
            raise DivergenceError(f"non-finite readout weights after update #{self.n_applied + 1}")
        self.W = W
        self.pending = np.zeros_like(self.pending)
        self.n_applied += 1

    def forward(self, s_bar, rng) -> PolicySample:
        return policy_forward(self.W, s_bar, rng)


def eq1_double_sum(probs, actions, traces, rewards, alpha: float, gamma: float) -> np.ndarray:
    """Literal double sum over steps t and t' <= t, for one episode.

    ``probs`` (T, K), ``actions`` (T,), ``traces`` (T, N), ``rewards`` (T,).
    Both sums are explicit loops (only the K x N entries are vectorised) so
    this can serve as an oracle for the incremental form.
    """
    probs = np.asarray(probs, dtype=float)
    traces = np.asarray(traces, dtype=float)
    T, K = probs.shape
    onehot = np.eye(K)[np.asarray(actions, dtype=int)]
    total = np.zeros((K, traces.shape[1]))
    for t in range(T):
        inner = np.zeros_like(total)
        for tp in range(t + 1):
            inner += gamma ** (t - tp) * np.outer(probs[tp] - onehot[tp], traces[tp])
        total += rewards[t] * inner
    return -alpha * total


def save_weights_csv(W: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["action_id", "neuron_id", "weight"])
        for k in range(W.shape[0]):
            for i in range(W.shape[1]):
                wr.writerow([k, i, repr(float(W[k, i]))])


def load_weights_csv(path, n_hidden: int | None = None) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty weight snapshot")
    n_act = 1 + max(int(r["action_id"]) for r in rows)
    n = 1 + max(int(r["neuron_id"]) for r in rows)
    if n_act != N_ACTIONS:
        raise ValueError(f"{path}: snapshot has {n_act} actions, expected {N_ACTIONS}")
    if n_hidden is not None and n != n_hidden:
        raise ValueError(f"{path}: snapshot has {n} neurons but the config asks for {n_hidden}")
    W = np.zeros((n_act, n))
    for r in rows:
        W[int(r["action_id"]), int(r["neuron_id"])] = float(r["weight"])
    return W
