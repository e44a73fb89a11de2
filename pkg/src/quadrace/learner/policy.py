"""Tanh-squashed Gaussian policy and value function over flat observations.

The actor maps an observation to the pre-squash Gaussian mean; a
state-independent log-std vector (clamped to [-5, 2]) sets exploration
noise. Actions are tanh(mean + std * noise), so they live in (-1, 1)^4 and
scale directly onto the setpoint box. Log-probabilities carry the exact
tanh change-of-variables correction. The critic is a separate MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import Layers, mlp_forward, mlp_init

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(eq=False)
class PolicyParams:
    """Actor layers, log-std vector, and critic layers."""

    actor: Layers
    log_std: np.ndarray
    critic: Layers

    @property
    def obs_dim(self) -> int:
        return self.actor[0][0].shape[0]

    @property
    def act_dim(self) -> int:
        return self.actor[-1][0].shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w, _ in self.actor[:-1])

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            actor=[(w.copy(), b.copy()) for w, b in self.actor],
            log_std=self.log_std.copy(),
            critic=[(w.copy(), b.copy()) for w, b in self.critic],
        )

    def flat_arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (actor, log_std, critic)."""
        out: list[np.ndarray] = []
        for w, b in self.actor:
            out.extend((w, b))
        out.append(self.log_std)
        for w, b in self.critic:
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.flat_arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.flat_arrays())

    def equals(self, other: "PolicyParams") -> bool:
        mine, theirs = self.flat_arrays(), other.flat_arrays()
        return len(mine) == len(theirs) and all(
            np.array_equal(a, b) for a, b in zip(mine, theirs)
        )


def init_policy(
    obs_dim: int,
    act_dim: int = 4,
    hidden: tuple[int, ...] = (128, 128),
    seed: int = 0,
    log_std_init: float = -0.5,
) -> PolicyParams:
    """Orthogonal-initialized actor/critic (gain sqrt(2) hidden, small heads)."""
    rng = np.random.default_rng(seed)
    actor = mlp_init([obs_dim, *hidden, act_dim], rng, head_gain=0.01)
    critic = mlp_init([obs_dim, *hidden, 1], rng, head_gain=1.0)
    return PolicyParams(actor=actor, log_std=np.full(act_dim, log_std_init), critic=critic)


def clamped_log_std(params: PolicyParams) -> np.ndarray:
    return np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """Evaluate actor and critic.

    obs may be (D,) or (B, D); returns (mean, log_std, value) with matching
    leading shape. ``mean`` is the Gaussian mean before tanh squashing.
    """
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[1] != params.obs_dim:
        raise ValueError(f"observation dim {x.shape[1]} != policy dim {params.obs_dim}")
    mean, _ = mlp_forward(params.actor, x)
    value, _ = mlp_forward(params.critic, x)
    log_std = clamped_log_std(params)
    if single:
        return mean[0], log_std, float(value[0, 0])
    return mean, log_std, value[:, 0]


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """sum_j log(1 - tanh(u_j)^2), computed stably; u is (..., A)."""
    return (2.0 * (math.log(2.0) - u - _softplus(-2.0 * u))).sum(axis=-1)


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    z = (u - mean) / np.exp(log_std)
    return (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(axis=-1)


def squashed_log_prob(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    """log-density of action tanh(u) under the squashed Gaussian."""
    return gaussian_log_prob(mean, log_std, u) - squash_correction(u)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the pre-squash Gaussian (the differentiable bonus term)."""
    return float(log_std.sum() + 0.5 * log_std.size * (1.0 + _LOG_2PI))


def sample_action(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Draw one squashed-Gaussian action for a single observation.

    Returns (action in (-1,1)^A, log_prob).
    """
    mean, log_std, _ = policy_forward(params, obs)
    u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return np.tanh(u), float(squashed_log_prob(mean, log_std, u))


def deterministic_action(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """Noise-free action: tanh of the actor mean."""
    mean, _, _ = policy_forward(params, obs)
    return np.tanh(mean)
