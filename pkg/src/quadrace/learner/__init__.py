"""Actor-critic function approximation and PPO optimization.

Everything is plain numpy with hand-derived layer gradients over a fixed
MLP graph; a finite-difference check in the test suite gates correctness.
"""

from .gae import GaeConfig, Transition, compute_gae, compute_gae_arrays
from .policy import (
    PolicyParams,
    deterministic_action,
    init_policy,
    policy_forward,
    sample_action,
    squashed_log_prob,
)
from .ppo import AdamState, RolloutBatch, ppo_loss_and_grad, ppo_update
from .checkpoint import load_policy, save_policy

__all__ = [
    "AdamState",
    "GaeConfig",
    "PolicyParams",
    "RolloutBatch",
    "Transition",
    "compute_gae",
    "compute_gae_arrays",
    "deterministic_action",
    "init_policy",
    "load_policy",
    "policy_forward",
    "ppo_loss_and_grad",
    "ppo_update",
    "sample_action",
    "save_policy",
    "squashed_log_prob",
]
