"""Generalized advantage estimation over time-ordered rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaeConfig:
    """Discounting plus the PPO hyperparameters that ride along with it."""

    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 256
    rollout_length: int = 4096

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")


@dataclass(eq=False)
class Transition:
    """One step of experience: the action is the pre-squash network sample."""

    observation: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool


def compute_gae_arrays(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over one time-ordered rollout.

    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1} with
    delta_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t, where V_{T} is the
    bootstrap value. Returns raw (unnormalized) advantages and
    returns = advantages + values; batch normalization happens at update
    time.
    """
    n = len(rewards)
    if n == 0:
        raise ValueError("empty rollout")
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def compute_gae(
    transitions: list[Transition],
    bootstrap_value: float,
    cfg: GaeConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over a list of Transition records (see compute_gae_arrays)."""
    rewards = np.array([t.reward for t in transitions])
    values = np.array([t.value for t in transitions])
    dones = np.array([t.done for t in transitions])
    return compute_gae_arrays(rewards, values, dones, bootstrap_value, cfg.gamma, cfg.lam)
