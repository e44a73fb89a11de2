"""Composite racing reward: progress, collision, alignment, and lap-time terms.

The per-step reward is

    w_p * (alpha * progress + beta * gates) + w_c * (-C if collided)
    + w_a * zeta * max(0, cos(theta) - cos(theta_threshold))
    + 100 / T_lap            (only on steps that complete a lap)

where ``progress`` is the signed centerline arc gained this step, ``gates``
counts gate passes, ``theta`` is the angle between the drone's heading and
the direction to the next gate, and ``T_lap`` is the completed lap's time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardWeights:
    w_progress: float = 1.0
    w_collision: float = 1.0
    w_alignment: float = 1.0
    progress_scale: float = 1.0        # alpha, per meter of arc
    gate_bonus: float = 5.0            # beta, per gate passed
    collision_penalty: float = 10.0    # C, must be positive
    alignment_scale: float = 0.5       # zeta
    alignment_threshold: float = math.radians(30.0)  # theta_threshold

    def __post_init__(self):
        if min(self.w_progress, self.w_collision, self.w_alignment) < 0.0:
            raise ValueError("term weights must be non-negative")
        if self.collision_penalty <= 0.0:
            raise ValueError("collision penalty must be positive")
        if min(self.progress_scale, self.gate_bonus, self.alignment_scale) < 0.0:
            raise ValueError("reward scales must be non-negative")


@dataclass(frozen=True)
class StepFacts:
    """What happened to one agent during one policy step."""

    progress: float = 0.0              # m of centerline arc, signed
    gates_passed: int = 0
    collided: bool = False
    alignment_angle: float = 0.0       # rad, heading vs next gate
    lap_time: float | None = None      # s, set when a lap completed this step


def reward_components(facts: StepFacts, weights: RewardWeights) -> np.ndarray:
    """The four weighted terms: [progress, collision, alignment, lap-time]."""
    progress = weights.w_progress * (
        weights.progress_scale * facts.progress + weights.gate_bonus * facts.gates_passed
    )
    collision = -weights.w_collision * weights.collision_penalty if facts.collided else 0.0
    alignment = weights.w_alignment * weights.alignment_scale * max(
        0.0, math.cos(facts.alignment_angle) - math.cos(weights.alignment_threshold)
    )
    lap = 100.0 / facts.lap_time if facts.lap_time is not None else 0.0
    return np.array([progress, collision, alignment, lap])


def compute_reward(facts: StepFacts, weights: RewardWeights) -> float:
    """Scalar step reward: the sum of the four weighted terms."""
    return float(reward_components(facts, weights).sum())
